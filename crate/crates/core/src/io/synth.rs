//! Deterministic synthetic signatures with a planted, tunable signal.
//!
//! Every generation step draws a full next-token distribution in one of two
//! styles:
//!
//! * **peaked**: one dominant token (mass in `[0.55, 0.95]`) with a
//!   geometrically decaying tail; the realized token is the dominant one.
//! * **flat**: mass spread over an effective support of 10–40 tokens; the
//!   realized token sits at rank 1–20.
//!
//! With probability `delta` a step takes its class's style (peaked for
//! positives, flat for negatives); otherwise the style is a fair coin shared
//! by both classes. `delta = 0` therefore makes features independent of the
//! label and `delta = 1` separates the classes at every step.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gsf::DEFAULT_EPS_FLOOR;
use crate::signature::{LosRecord, RawTds};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab: usize,
    pub k: usize,
    /// Signal strength in `[0, 1]`.
    pub delta: f64,
    pub seed: u64,
    /// Consecutive same-class records sharing a group id.
    pub records_per_group: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            min_len: 8,
            max_len: 32,
            vocab: 1000,
            k: 20,
            delta: 0.5,
            seed: 0,
            records_per_group: 10,
        }
    }
}

impl SynthConfig {
    pub fn n_records(&self) -> usize {
        2 * self.n_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0,1]", self.delta)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad length range {}..={}", self.min_len, self.max_len)));
        }
        if self.vocab < 64 {
            return Err(Error::Config(format!("vocabulary of {} is too small (need 64)", self.vocab)));
        }
        if self.k == 0 || self.records_per_group == 0 {
            return Err(Error::Config("k and records_per_group must be positive".into()));
        }
        Ok(())
    }
}

/// One generated sequence before preprocessing.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub raw: RawTds,
    pub label: bool,
    pub group_id: String,
}

fn peaked_row(rng: &mut ChaCha8Rng, vocab: usize) -> (Vec<f64>, usize) {
    let top = rng.gen_range(0.55..0.95);
    let decay: f64 = rng.gen_range(0.5..0.8);
    let tail: Vec<f64> = (1..vocab).map(|j| decay.powi(j as i32) + 1e-6 / j as f64).collect();
    let tail_sum: f64 = tail.iter().sum();
    let mut vals = Vec::with_capacity(vocab);
    vals.push(top);
    vals.extend(tail.iter().map(|w| (1.0 - top) * w / tail_sum));
    (vals, 0)
}

fn flat_row(rng: &mut ChaCha8Rng, vocab: usize) -> (Vec<f64>, usize) {
    let support = rng.gen_range(10..=40usize);
    let mut head: Vec<f64> = (0..support).map(|_| rng.gen_range(0.5..1.5)).collect();
    let head_sum: f64 = head.iter().sum();
    head.iter_mut().for_each(|w| *w *= 0.97 / head_sum);
    head.sort_by(|a, b| b.total_cmp(a));
    let tail: Vec<f64> = (1..=vocab - support).map(|j| 0.999f64.powi(j as i32)).collect();
    let tail_sum: f64 = tail.iter().sum();
    // Tail entries stay below the smallest head entry (>= 0.97*0.5/(1.5*40)).
    let mut vals = head;
    vals.extend(tail.iter().map(|w| 0.03 * w / tail_sum));
    let rank = rng.gen_range(1..=20.min(support - 1));
    (vals, rank)
}

fn sample_sequence(cfg: &SynthConfig, label: bool, rng: &mut ChaCha8Rng) -> RawTds {
    let n = rng.gen_range(cfg.min_len..=cfg.max_len);
    let mut probs = Vec::with_capacity(n * cfg.vocab);
    let mut ids = Vec::with_capacity(n);
    let mut perm: Vec<usize> = (0..cfg.vocab).collect();
    for _ in 0..n {
        let peaked = if rng.gen_bool(cfg.delta) { label } else { rng.gen_bool(0.5) };
        // vals sorted descending; `at` is the realized token's position in it
        let (vals, at) = if peaked { peaked_row(rng, cfg.vocab) } else { flat_row(rng, cfg.vocab) };
        perm.shuffle(rng);
        let mut row = vec![0.0; cfg.vocab];
        for (j, &v) in vals.iter().enumerate() {
            row[perm[j]] = v;
        }
        let s: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / s));
        ids.push(perm[at]);
    }
    RawTds::new(probs, cfg.vocab, ids).expect("generator rows are distributions")
}

/// Raw samples in record order. Positives and negatives are interleaved by a
/// seeded shuffle; each record draws from its own RNG stream.
pub fn gen_raw(cfg: &SynthConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let mut labels: Vec<bool> = (0..cfg.n_records()).map(|i| i < cfg.n_per_class).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    labels.shuffle(&mut order_rng);
    let mut class_index = [0usize; 2];
    let slots: Vec<(bool, String)> = labels
        .into_iter()
        .map(|label| {
            let c = &mut class_index[usize::from(label)];
            let group = format!("{}-{:05}", if label { "pos" } else { "neg" }, *c / cfg.records_per_group);
            *c += 1;
            (label, group)
        })
        .collect();
    Ok(slots
        .into_par_iter()
        .enumerate()
        .map(|(i, (label, group_id))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            SyntheticSample { raw: sample_sequence(cfg, label, &mut rng), label, group_id }
        })
        .collect())
}

/// Labeled records with exact full-vocabulary token statistics.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<LosRecord>> {
    gen_raw(cfg)?
        .into_par_iter()
        .map(|s| {
            let mut rec = LosRecord::from_raw(&s.raw, cfg.k, DEFAULT_EPS_FLOOR)?;
            rec.label = Some(s.label);
            rec.group_id = Some(s.group_id);
            rec.meta.insert("llm".into(), "synthetic".into());
            rec.meta.insert("dataset".into(), format!("synthetic-delta{}-seed{}", cfg.delta, cfg.seed));
            rec.meta.insert("kind".into(), "input".into());
            Ok(rec)
        })
        .collect()
}
