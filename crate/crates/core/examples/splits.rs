//! Grouped train/test split and k-fold rotation over a record set.
//!
//! cargo run --release --example splits

use std::collections::BTreeSet;

use losnet::eval::{grouped_split, kfold_splits};
use losnet::io::synth::{gen_synthetic, SynthConfig};

fn main() -> losnet::Result<()> {
    let records = gen_synthetic(&SynthConfig { n_per_class: 200, records_per_group: 8, ..SynthConfig::default() })?;
    let (train, test) = grouped_split(&records, 0.8, 42)?;
    let groups = |idx: &[usize]| idx.iter().filter_map(|&i| records[i].group_id.clone()).collect::<BTreeSet<_>>();
    let (gtr, gte) = (groups(&train), groups(&test));
    let pos = test.iter().filter(|&&i| records[i].label == Some(true)).count();
    println!(
        "grouped: {} train / {} test records, {} / {} groups, shared groups {}, test positives {:.1}%",
        train.len(),
        test.len(),
        gtr.len(),
        gte.len(),
        gtr.intersection(&gte).count(),
        100.0 * pos as f64 / test.len() as f64
    );
    for (f, fold) in kfold_splits(records.len(), 5, 42)?.iter().enumerate() {
        println!("fold {f}: train {} val {} test {}", fold.train.len(), fold.val.len(), fold.test.len());
    }
    Ok(())
}
