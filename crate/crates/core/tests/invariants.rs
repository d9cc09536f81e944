mod common;

use losnet::eval::auc;
use losnet::gsf::{GsfConfig, Method};
use losnet::io::format::{decode_records, encode_records, read_records, write_records};
use losnet::io::synth::{gen_synthetic, SynthConfig};
use losnet::model::config::{ModelKind, RankMode, TrainConfig};
use losnet::model::network::{forward, predict_scores};
use losnet::model::params::ModelParams;
use losnet::signature::{compute_ranks, extract_atp, pad_to, topk_sort};
use losnet::{LosRecord, RawTds};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use common::*;

fn permute_vocab(raw: &RawTds, perm: &[usize]) -> RawTds {
    let v = raw.vocab();
    let mut probs = vec![0.0; raw.seq_len() * v];
    for i in 0..raw.seq_len() {
        for (j, &x) in raw.row(i).iter().enumerate() {
            probs[i * v + perm[j]] = x;
        }
    }
    let ids = raw.token_ids().iter().map(|&t| perm[t]).collect();
    RawTds::new(probs, v, ids).unwrap()
}

fn params_for(kind: ModelKind, rank_mode: RankMode, k: usize) -> ModelParams<f32> {
    let arch = small_arch(TrainConfig { model_kind: kind, rank_mode, ..TrainConfig::default() }, k);
    ModelParams::init(arch, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vocab_permutation_leaves_record_unchanged(seed in any::<u64>(), n in 1usize..12, vocab in 2usize..40, k in 1usize..50) {
        let mut r = rng(seed);
        let raw = random_raw(&mut r, n, vocab);
        let mut perm: Vec<usize> = (0..vocab).collect();
        perm.shuffle(&mut r);
        let a = LosRecord::from_raw(&raw, k, 1e-12).unwrap();
        let b = LosRecord::from_raw(&permute_vocab(&raw, &perm), k, 1e-12).unwrap();
        prop_assert_eq!(&a.topk, &b.topk);
        prop_assert_eq!(&a.atp, &b.atp);
        prop_assert_eq!(&a.ranks, &b.ranks);
        for method in Method::ALL {
            let cfg = GsfConfig::default();
            let (sa, sb) = (method.score(&a, &cfg), method.score(&b, &cfg));
            prop_assert_eq!(sa.unwrap().to_bits(), sb.unwrap().to_bits());
        }
    }

    #[test]
    fn ranks_agree_with_topk(seed in any::<u64>(), n in 1usize..10, vocab in 2usize..30) {
        let mut r = rng(seed);
        let raw = random_raw(&mut r, n, vocab);
        let full = topk_sort(&raw, vocab).unwrap();
        let atp = extract_atp(&raw).unwrap();
        let ranks = compute_ranks(&raw).unwrap();
        for i in 0..n {
            let row = &full[i * vocab..(i + 1) * vocab];
            let rk = ranks[i] as usize;
            // The sorted row holds the realized probability at its rank, and
            // exactly `rank` entries strictly above it.
            prop_assert_eq!(row[rk], atp[i]);
            prop_assert_eq!(row.iter().filter(|&&x| x > atp[i]).count(), rk);
        }
    }

    #[test]
    fn mass_is_monotone_in_k(seed in any::<u64>(), n in 1usize..10, vocab in 2usize..60) {
        let mut r = rng(seed);
        let rec = LosRecord::from_raw(&random_raw(&mut r, n, vocab), vocab, 1e-12).unwrap();
        let mut prev = 0.0;
        for k in 1..=vocab {
            let m = rec.mass_at(k).unwrap();
            prop_assert!(m >= prev);
            prev = m;
        }
        prop_assert!((prev - 1.0).abs() < 1e-5);
    }

    #[test]
    fn format_round_trips(seed in any::<u64>(), count in 0usize..6, mask in 0u8..16) {
        let mut r = rng(seed);
        let recs: Vec<LosRecord> = (0..count)
            .map(|i| {
                let mut rec = LosRecord::from_raw(&random_raw(&mut r, 1 + i, 9), 1 + i % 12, 1e-12).unwrap();
                rec.label = (mask & 1 != 0).then_some(i % 2 == 0);
                if mask & 2 != 0 {
                    rec.mu = None;
                    rec.sigma = None;
                }
                if mask & 4 != 0 {
                    rec.ranks = None;
                }
                rec.group_id = (mask & 8 != 0).then(|| format!("grp-{i}"));
                rec
            })
            .collect();
        let bytes = encode_records(&recs).unwrap();
        let back = decode_records(&bytes).unwrap();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(encode_records(&back).unwrap(), bytes);
    }

    #[test]
    fn auc_invariances(seed in any::<u64>(), n in 2usize..80) {
        let mut r = rng(seed);
        let mut y: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let s: Vec<f64> = (0..n).map(|_| r.gen_range(-3i32..4) as f64 * 0.5).collect();
        let a = auc(&s, &y).unwrap();
        let shifted: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auc(&shifted, &y).unwrap(), a);
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc(&neg, &y).unwrap() + a - 1.0).abs() < 1e-12);
        prop_assert_eq!(a, pairwise_auc(&s, &y));
    }

    #[test]
    fn forward_ignores_padding_and_batching(seed in any::<u64>(), n in 1usize..7, extra in 0usize..4) {
        let mut r = rng(seed);
        let recs: Vec<LosRecord> = (0..4).map(|i| random_record(&mut r, n + i % 2, 5, i % 2 == 0)).collect();
        for kind in ModelKind::ALL {
            for mode in [RankMode::Scaled, RankMode::Lookup] {
                let p = params_for(kind, mode, 5);
                let batch = predict_scores(&p, &recs).unwrap();
                let mut reversed = recs.clone();
                reversed.reverse();
                let rev = predict_scores(&p, &reversed).unwrap();
                for (i, rec) in recs.iter().enumerate() {
                    let single = predict_scores(&p, std::slice::from_ref(rec)).unwrap()[0];
                    prop_assert_eq!(batch[i].to_bits(), single.to_bits());
                    prop_assert_eq!(rev[recs.len() - 1 - i].to_bits(), single.to_bits());
                    let padded = pad_to(rec, rec.seq_len() + extra);
                    prop_assert_eq!(forward(&p, rec).unwrap().to_bits(), forward(&p, &padded).unwrap().to_bits());
                }
            }
        }
    }
}

#[test]
fn written_file_hash_is_stable() {
    let cfg = SynthConfig { n_per_class: 30, seed: 12, ..SynthConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.los"), dir.path().join("b.los"));
    write_records(&gen_synthetic(&cfg).unwrap(), &a).unwrap();
    write_records(&read_records(&a).unwrap(), &b).unwrap();
    write_records(&gen_synthetic(&cfg).unwrap(), dir.path().join("c.los")).unwrap();
    let hash = |p: &std::path::Path| Sha256::digest(std::fs::read(p).unwrap());
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(hash(&a), hash(&dir.path().join("c.los")));
}
