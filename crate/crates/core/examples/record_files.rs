//! Build records from full token distributions, write them to a record file
//! and read them back.
//!
//! cargo run --release --example record_files -- [path]

use losnet::io::format::{read_records, write_records};
use losnet::io::synth::{gen_raw, SynthConfig};
use losnet::LosRecord;

fn main() -> losnet::Result<()> {
    let path =
        std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("example.los").display().to_string());
    let samples = gen_raw(&SynthConfig { n_per_class: 4, vocab: 200, seed: 1, ..SynthConfig::default() })?;
    let records = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = LosRecord::from_raw(&s.raw, 16, 1e-12)?;
            r.label = Some(s.label);
            r.group_id = Some(format!("doc-{}", i / 2));
            Ok(r)
        })
        .collect::<losnet::Result<Vec<_>>>()?;
    write_records(&records, &path)?;
    let back = read_records(&path)?;
    assert_eq!(back, records);
    for r in &back {
        println!(
            "{:<6} label={:?} steps={} k={} mass={:.4} first ranks={:?}",
            r.group_id.as_deref().unwrap_or("-"),
            r.label,
            r.seq_len(),
            r.k,
            r.mass_at(r.k)?,
            &r.ranks.as_ref().unwrap()[..3.min(r.seq_len())]
        );
    }
    println!("wrote and re-read {} records at {path}", back.len());
    Ok(())
}
