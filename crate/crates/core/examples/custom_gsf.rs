//! Every built-in scorer is a gated sum; this checks that on real records and
//! then plugs in a scorer of our own: the mean log-probability of the tokens
//! that were not the model's top choice.
//!
//! cargo run --release --example custom_gsf

use losnet::eval::auc;
use losnet::gsf::{gsf_apply, GsfConfig, GsfSpec, Method};
use losnet::io::synth::{gen_synthetic, SynthConfig};

fn main() -> losnet::Result<()> {
    let records = gen_synthetic(&SynthConfig { delta: 0.5, seed: 3, ..SynthConfig::default() })?;
    let labels: Vec<bool> = records.iter().map(|r| r.label == Some(true)).collect();

    let cfg = GsfConfig::default();
    for m in Method::ALL {
        let spec = m.gsf(&cfg);
        let mut worst = 0.0f64;
        for r in &records {
            worst = worst.max((m.score(r, &cfg)? - gsf_apply(&spec, r)?).abs());
        }
        println!("{:<8} direct vs gated sum: max |diff| {worst:.2e}", m.name());
    }

    // Gate on rank >= 1, weight ln p / N.
    let off_top = GsfSpec::new(
        |r| Ok(r.ranks.as_ref().expect("ranks").iter().map(|&k| f64::from(k)).collect()),
        |_| Ok(1.0),
        |r| {
            let n = r.seq_len() as f64;
            Ok(r.atp.iter().map(|&p| f64::from(p).max(1e-12).ln() / n).collect())
        },
    );
    let scores = records.iter().map(|r| gsf_apply(&off_top, r)).collect::<losnet::Result<Vec<_>>>()?;
    println!("off-top log-prob scorer AUC {:.4}", auc(&scores, &labels)?);
    Ok(())
}
