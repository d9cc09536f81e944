//! AUC of every heuristic scorer as the planted signal grows.
//!
//! cargo run --release --example score_baselines

use losnet::eval::auc;
use losnet::gsf::{GsfConfig, Method, Scale};
use losnet::io::synth::{gen_synthetic, SynthConfig};

fn main() -> losnet::Result<()> {
    print!("{:>6}", "delta");
    for m in Method::ALL {
        print!("{:>9}", m.name());
    }
    println!();
    for delta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let records = gen_synthetic(&SynthConfig { delta, seed: 7, ..SynthConfig::default() })?;
        let labels: Vec<bool> = records.iter().map(|r| r.label == Some(true)).collect();
        print!("{delta:>6.2}");
        for m in Method::ALL {
            let cfg = GsfConfig { scale: Scale::Prob, ..GsfConfig::default() };
            let scores = records.iter().map(|r| m.score(r, &cfg)).collect::<losnet::Result<Vec<_>>>()?;
            print!("{:>9.4}", auc(&scores, &labels)?);
        }
        println!();
    }
    Ok(())
}
