//! AdamW training with a linear warmup/decay schedule, best-checkpoint
//! selection on validation AUC and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Arch, TrainConfig};
use super::network::{batch_loss_grad, predict_logits};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::signature::LosRecord;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Validation AUC of the starting parameters.
    pub initial_val_auc: f64,
    pub epochs: Vec<EpochStats>,
    /// 0 when no epoch beat the starting parameters.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
}

/// Linear warmup to the peak rate, then linear decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_frac: f64, total: usize) -> Self {
        Self { peak, warmup: (warmup_frac * total as f64) as usize, total }
    }

    /// Rate used by the update following `step` completed updates.
    pub fn lr(&self, step: usize) -> f64 {
        let factor = if step < self.warmup {
            step as f64 / self.warmup.max(1) as f64
        } else {
            (self.total.saturating_sub(step)) as f64 / (self.total - self.warmup).max(1) as f64
        };
        self.peak * factor
    }
}

/// AdamW with decoupled weight decay.
pub struct AdamW {
    m: ModelParams<f32>,
    v: ModelParams<f32>,
    t: i32,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ModelParams<f32>, weight_decay: f64) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0, weight_decay }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let tensors = params.named_mut().into_iter().zip(grads.named());
        let state = self.m.named_mut().into_iter().zip(self.v.named_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors.zip(state) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] *= decay;
                p.data[i] -= step * m.data[i] / (v.data[i].sqrt() / bc2_sqrt + ADAM_EPS as f32);
            }
        }
    }
}

fn labels_of(records: &[LosRecord], what: &str) -> Result<Vec<bool>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or_else(|| Error::domain(format!("{what} record {i} has no label"))))
        .collect()
}

fn check_splits(train: &[LosRecord], val: &[LosRecord]) -> Result<(Vec<bool>, Vec<bool>)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::domain("training and validation splits must be non-empty"));
    }
    let tl = labels_of(train, "training")?;
    if tl.iter().all(|&y| y) || tl.iter().all(|&y| !y) {
        return Err(Error::domain("training labels contain a single class"));
    }
    Ok((tl, labels_of(val, "validation")?))
}

/// Fresh parameters for `cfg`, taking the top-K width from the data when
/// `cfg.topk` is 0.
pub fn init_params(train: &[LosRecord], cfg: &TrainConfig) -> Result<ModelParams<f32>> {
    let k = if cfg.topk > 0 { cfg.topk } else { train.iter().map(|r| r.k).max().unwrap_or(0) };
    let arch = Arch::from_config(cfg, k)?;
    Ok(ModelParams::init(arch, cfg.seed))
}

fn val_auc(params: &ModelParams<f32>, val: &[LosRecord], labels: &[bool]) -> Result<f64> {
    auc(&predict_logits(params, val)?, labels)
}

fn fit(
    mut params: ModelParams<f32>,
    train: &[LosRecord],
    val: &[LosRecord],
    cfg: &TrainConfig,
    early_stop: bool,
    on_epoch: &mut dyn FnMut(&EpochStats) -> bool,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let (_, val_labels) = check_splits(train, val)?;
    let batches = train.len().div_ceil(cfg.batch_size);
    let sched = LinearSchedule::new(cfg.learning_rate, cfg.warmup_frac, cfg.epochs * batches);
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    let initial = val_auc(&params, val, &val_labels)?;
    let mut hist = TrainHistory {
        initial_val_auc: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_auc: initial,
        stopped_early: false,
    };
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LosRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let drop_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64);
            let (loss, grads) = batch_loss_grad(&params, &batch, cfg.dropout, Some(drop_seed))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite { component: "training loss" });
            }
            lr = sched.lr(step);
            opt.step(&mut params, &grads, lr);
            loss_sum += f64::from(loss) * batch.len() as f64;
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auc: val_auc(&params, val, &val_labels)?,
            lr,
        };
        if stats.val_auc > hist.best_val_auc {
            hist.best_val_auc = stats.val_auc;
            hist.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let proceed = on_epoch(&stats);
        hist.epochs.push(stats);
        if early_stop && stale >= cfg.patience {
            hist.stopped_early = true;
            break;
        }
        if !proceed {
            break;
        }
    }
    Ok((best, hist))
}

/// Trains from a fresh initialization and returns the best-validation
/// parameters.
pub fn train(train: &[LosRecord], val: &[LosRecord], cfg: &TrainConfig) -> Result<(ModelParams<f32>, TrainHistory)> {
    train_with(train, val, cfg, |_| true)
}

/// [`train`] with a per-epoch callback; returning `false` stops after that
/// epoch.
pub fn train_with(
    train: &[LosRecord],
    val: &[LosRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats) -> bool,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    cfg.validate()?;
    check_splits(train, val)?;
    let params = init_params(train, cfg)?;
    fit(params, train, val, cfg, true, &mut on_epoch)
}

/// Continues training from `params` for `cfg.epochs` epochs without early
/// stopping. Architecture fields of `cfg` are ignored.
pub fn finetune(
    params: &ModelParams<f32>,
    train: &[LosRecord],
    val: &[LosRecord],
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    cfg.validate()?;
    fit(params.clone(), train, val, cfg, false, &mut |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{gen_synthetic, SynthConfig};

    fn data(delta: f64, seed: u64, n: usize) -> Vec<LosRecord> {
        gen_synthetic(&SynthConfig { n_per_class: n, vocab: 100, k: 8, delta, seed, ..SynthConfig::default() }).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { emb_size: 16, heads: 4, epochs: 3, batch_size: 16, learning_rate: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(5) - 0.5).abs() < 1e-12);
        assert_eq!(s.lr(10), 1.0);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert_eq!(s.lr(100), 0.0);
    }

    #[test]
    fn deterministic_history() {
        let (tr, va) = (data(0.8, 1, 40), data(0.8, 2, 20));
        let c = TrainConfig { dropout: 0.3, ..cfg() };
        let (p1, h1) = train(&tr, &va, &c).unwrap();
        let (p2, h2) = train(&tr, &va, &c).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let (tr, va) = (data(0.8, 1, 30), data(0.8, 2, 20));
        let c = TrainConfig { learning_rate: 0.0, ..cfg() };
        let (p, h) = train(&tr, &va, &c).unwrap();
        assert_eq!(p, init_params(&tr, &c).unwrap());
        assert!(h.epochs.iter().all(|e| e.val_auc == h.initial_val_auc));
    }

    #[test]
    fn zero_epoch_finetune_returns_input() {
        let (tr, va) = (data(0.8, 1, 30), data(0.8, 2, 20));
        let p = init_params(&tr, &cfg()).unwrap();
        let (q, h) = finetune(&p, &tr, &va, &TrainConfig { epochs: 0, ..cfg() }).unwrap();
        assert_eq!(p, q);
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn single_class_rejected() {
        let tr: Vec<LosRecord> = data(0.5, 1, 10).into_iter().filter(|r| r.label == Some(true)).collect();
        assert!(matches!(train(&tr, &data(0.5, 2, 5), &cfg()), Err(Error::Domain(_))));
        assert!(train(&[], &data(0.5, 2, 5), &cfg()).is_err());
    }
}
