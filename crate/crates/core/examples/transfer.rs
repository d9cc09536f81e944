//! Fine-tune a detector trained on one dataset against training from scratch
//! on a small, harder target set.
//!
//! cargo run --release --example transfer -- [trials]

use losnet::eval::{auc, mean_std};
use losnet::io::synth::{gen_synthetic, SynthConfig};
use losnet::model::config::TrainConfig;
use losnet::model::network::predict_scores;
use losnet::model::params::ModelParams;
use losnet::model::train::{finetune, train};
use losnet::LosRecord;

fn test_auc(p: &ModelParams<f32>, te: &[LosRecord]) -> losnet::Result<f64> {
    let y: Vec<bool> = te.iter().map(|r| r.label == Some(true)).collect();
    auc(&predict_scores(p, te)?, &y)
}

fn main() -> losnet::Result<()> {
    let trials: u64 = std::env::args().nth(1).map_or(5, |s| s.parse().expect("trials"));
    let base = SynthConfig { min_len: 4, max_len: 10, ..SynthConfig::default() };
    let gen = |delta, seed, n_per_class| gen_synthetic(&SynthConfig { n_per_class, delta, seed, ..base.clone() });

    let (source, hist) =
        train(&gen(0.75, 500, 600)?, &gen(0.75, 501, 150)?, &TrainConfig { epochs: 15, ..TrainConfig::default() })?;
    println!("source detector: val auc {:.4}", hist.best_val_auc);

    let (mut ft_aucs, mut sc_aucs) = (Vec::new(), Vec::new());
    for trial in 0..trials {
        let seed = 1000 + 10 * trial;
        let (tr, va, te) = (gen(0.6, seed, 32)?, gen(0.6, seed + 1, 50)?, gen(0.6, seed + 2, 200)?);
        let cfg = TrainConfig { epochs: 10, seed: trial, ..TrainConfig::default() };
        let (ft, _) = finetune(&source, &tr, &va, &cfg)?;
        let (sc, _) = train(&tr, &va, &cfg)?;
        let (a, b) = (test_auc(&ft, &te)?, test_auc(&sc, &te)?);
        println!("trial {trial}: finetune {a:.4}  scratch {b:.4}");
        ft_aucs.push(a);
        sc_aucs.push(b);
    }
    let (fm, fs) = mean_std(&ft_aucs);
    let (sm, ss) = mean_std(&sc_aucs);
    println!("finetune {fm:.4} ± {fs:.4}   scratch {sm:.4} ± {ss:.4}");
    Ok(())
}
