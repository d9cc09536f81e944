//! How much probability mass the top-K truncation keeps, and what a detector
//! loses when trained on narrower rows.
//!
//! cargo run --release --example k_ablation

use losnet::eval::auc;
use losnet::io::synth::{gen_synthetic, SynthConfig};
use losnet::model::config::TrainConfig;
use losnet::model::network::predict_scores;
use losnet::model::train::train;
use losnet::LosRecord;

fn main() -> losnet::Result<()> {
    let data = |seed, n_per_class| {
        gen_synthetic(&SynthConfig { n_per_class, k: 1000, delta: 0.6, seed, ..SynthConfig::default() })
    };
    let (tr, va, te) = (data(20, 300)?, data(21, 100)?, data(22, 250)?);
    let labels: Vec<bool> = te.iter().map(|r| r.label == Some(true)).collect();
    let cut = |v: &[LosRecord], k| v.iter().map(|r| r.with_top(k)).collect::<Vec<_>>();
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };

    println!("{:>6} {:>8} {:>8}", "K", "mass", "auc");
    for k in [1, 10, 50, 100, 500, 1000] {
        let mass = te.iter().map(|r| r.mass_at(k)).sum::<losnet::Result<f64>>()? / te.len() as f64;
        let (p, _) = train(&cut(&tr, k), &cut(&va, k), &cfg)?;
        let a = auc(&predict_scores(&p, &cut(&te, k))?, &labels)?;
        println!("{k:>6} {mass:>8.4} {a:>8.4}");
    }
    Ok(())
}
