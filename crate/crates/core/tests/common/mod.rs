#![allow(dead_code)]

use std::collections::BTreeMap;

use losnet::model::config::{Arch, TrainConfig};
use losnet::model::params::ModelParams;
use losnet::{LosRecord, RawTds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random full distribution over `vocab` tokens with some exact zeros.
pub fn random_raw(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> RawTds {
    let mut probs = Vec::with_capacity(n * vocab);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> =
            (0..vocab).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>().powi(3) }).collect();
        row[rng.gen_range(0..vocab)] += 0.05;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        ids.push(rng.gen_range(0..vocab));
        probs.extend(row);
    }
    RawTds::new(probs, vocab, ids).unwrap()
}

/// A model-ready record built directly (not from a full TDS).
pub fn random_record(rng: &mut ChaCha8Rng, n: usize, k: usize, label: bool) -> LosRecord {
    let mut topk = Vec::with_capacity(n * k);
    let (mut atp, mut ranks) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let mut row: Vec<f32> = (0..k).map(|_| rng.gen_range(0.0..1.0f32)).collect();
        let s: f32 = row.iter().sum::<f32>() * 1.2;
        row.iter_mut().for_each(|x| *x /= s);
        row.sort_by(|a, b| b.total_cmp(a));
        let r = rng.gen_range(0..k + 3);
        atp.push(if r < k { row[r] } else { 0.01 });
        ranks.push(r as u32);
        topk.extend(row);
    }
    LosRecord {
        k,
        topk,
        atp,
        ranks: Some(ranks),
        mu: None,
        sigma: None,
        label: Some(label),
        group_id: None,
        meta: BTreeMap::new(),
    }
}

/// Mann-Whitney AUC by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit2 = 0u64;
    let mut pairs = 0u64;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1;
            credit2 += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    credit2 as f64 / (2 * pairs) as f64
}

/// Small architecture used by gradient checks.
pub fn small_arch(cfg: TrainConfig, k: usize) -> Arch {
    let cfg = TrainConfig { emb_size: 16, heads: 4, num_layers: 2, n_max: 8, rank_cap: 4, ..cfg };
    Arch::from_config(&cfg, k).unwrap()
}

/// Parameters for a finite-difference check: small random weights, and
/// biases feeding a ReLU pushed to ±(0.5..1.5) so no unit sits on its kink.
pub fn gradcheck_params(arch: Arch, seed: u64) -> ModelParams<f64> {
    let mut r = rng(seed);
    let mut p = ModelParams::<f64>::init(arch, seed);
    for (_, m) in p.named_mut() {
        for x in &mut m.data {
            *x += r.gen_range(-0.1..0.1);
        }
    }
    for (name, m) in p.named_mut() {
        if name.ends_with("ff1_b") || (name.starts_with("mlp") && name.ends_with("_b")) {
            for x in &mut m.data {
                let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                *x = sign * r.gen_range(0.5..1.5);
            }
        }
    }
    p
}
