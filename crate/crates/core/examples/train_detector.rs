//! Train LOS-Net on planted-signal data and report validation AUC per epoch.
//!
//! cargo run --release --example train_detector -- [delta] [epochs]

use std::time::Instant;

use losnet::io::synth::{gen_synthetic, SynthConfig};
use losnet::model::config::TrainConfig;
use losnet::model::train::train_with;

fn main() -> losnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let delta: f64 = args.next().map_or(0.75, |s| s.parse().expect("delta"));
    let epochs: usize = args.next().map_or(50, |s| s.parse().expect("epochs"));

    let data = |n_per_class, seed| gen_synthetic(&SynthConfig { n_per_class, delta, seed, ..SynthConfig::default() });
    let train = data(2000, 0)?;
    let val = data(500, 1)?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };

    let start = Instant::now();
    let (_, hist) = train_with(&train, &val, &cfg, |e| {
        println!(
            "epoch {:3}  loss {:.4}  val auc {:.4}  lr {:.2e}  {:.1}s",
            e.epoch,
            e.train_loss,
            e.val_auc,
            e.lr,
            start.elapsed().as_secs_f64()
        );
        true
    })?;
    println!("best epoch {} with val auc {:.4}", hist.best_epoch, hist.best_val_auc);
    Ok(())
}
