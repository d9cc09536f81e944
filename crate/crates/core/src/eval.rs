//! ROC-AUC, evaluation splits and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signature::LosRecord;

/// Area under the ROC curve as the Mann–Whitney statistic.
///
/// Every (positive, negative) pair earns 1 when the positive scores higher
/// and 0.5 on an exact tie. Runs in `O(n log n)` with mid-rank tie groups.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain("AUC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the pairwise credit: 2 per win, 1 per tie, kept integral.
    let mut credit2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&o| labels[o]).count() as u128;
        let neg_here = (j - i) as u128 - pos_here;
        credit2 += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(credit2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Book-level split: groups of each class are shuffled independently with
/// `seed`, and the leading `train_frac` of each list goes to training.
///
/// Returns record indices `(train, test)` in ascending order. No group ever
/// straddles the split.
pub fn grouped_split(records: &[LosRecord], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Config(format!("train fraction {train_frac} outside [0,1]")));
    }
    // group -> label, checked consistent
    let mut groups: BTreeMap<&str, bool> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let g = r.group_id.as_deref().ok_or_else(|| Error::domain(format!("record {i} has no group id")))?;
        let l = r.label.ok_or_else(|| Error::domain(format!("record {i} has no label")))?;
        if let Some(prev) = groups.insert(g, l) {
            if prev != l {
                return Err(Error::domain(format!("group {g:?} mixes labels")));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_groups = std::collections::BTreeSet::new();
    for class in [true, false] {
        let mut list: Vec<&str> = groups.iter().filter(|(_, &l)| l == class).map(|(g, _)| *g).collect();
        list.shuffle(&mut rng);
        let cut = (train_frac * list.len() as f64 + 1e-9).floor() as usize;
        train_groups.extend(list[..cut].iter().copied());
    }
    let (train, test) =
        (0..records.len()).partition(|&i| train_groups.contains(records[i].group_id.as_deref().unwrap()));
    Ok((train, test))
}

/// One fold's index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// k-fold rotation with validation and test folds: fold `f` tests on chunk
/// `f`, validates on chunk `f+1 (mod folds)` and trains on the rest.
///
/// Indices are shuffled with `seed` first; remainders go to the leading
/// chunks.
pub fn kfold_splits(n: usize, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 3 {
        return Err(Error::Config(format!("need at least 3 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::domain(format!("{n} items cannot fill {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut chunks = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut c = idx[start..start + len].to_vec();
        c.sort_unstable();
        chunks.push(c);
        start += len;
    }
    Ok((0..folds)
        .map(|f| {
            let v = (f + 1) % folds;
            let mut train: Vec<usize> =
                (0..folds).filter(|&c| c != f && c != v).flat_map(|c| chunks[c].iter().copied()).collect();
            train.sort_unstable();
            Fold { train, val: chunks[v].clone(), test: chunks[f].clone() }
        })
        .collect())
}

/// AUC of one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split_id: String,
    pub seed: Option<u64>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_record_scores: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn new(method: &str, split_id: &str, scores: &[f64], labels: &[bool]) -> Result<Self> {
        let auc = auc(scores, labels)?;
        let n_pos = labels.iter().filter(|&&l| l).count();
        Ok(Self {
            method: method.to_string(),
            split_id: split_id.to_string(),
            seed: None,
            auc,
            n_pos,
            n_neg: labels.len() - n_pos,
            per_record_scores: None,
        })
    }

    /// `method=.. split=.. auc=.. n=.. seed=..` on one line.
    pub fn line(&self) -> String {
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        format!(
            "method={} split={} auc={:.6} n={} n_pos={} n_neg={} seed={}",
            self.method,
            self.split_id,
            self.auc,
            self.n_pos + self.n_neg,
            self.n_pos,
            self.n_neg,
            seed
        )
    }
}

/// Several runs of one method (seeds or folds) with their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub runs: Vec<EvalReport>,
    pub auc_mean: f64,
    pub auc_std: f64,
}

impl EvalSummary {
    pub fn new(runs: Vec<EvalReport>) -> Self {
        let aucs: Vec<f64> = runs.iter().map(|r| r.auc).collect();
        let (auc_mean, auc_std) = mean_std(&aucs);
        Self { runs, auc_mean, auc_std }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            writeln!(out, "{}", r.line()).unwrap();
        }
        writeln!(out, "summary runs={} auc_mean={:.6} auc_std={:.6}", self.runs.len(), self.auc_mean, self.auc_std)
            .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.7, 0.6, 0.5], &[true, false, true, false]).unwrap(), 0.75);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }
    }

    #[test]
    fn kfold_sizes() {
        let folds = kfold_splits(5, 5, 0).unwrap();
        assert!(folds.iter().all(|f| (f.train.len(), f.val.len(), f.test.len()) == (3, 1, 1)));
        let folds = kfold_splits(103, 5, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![21, 21, 21, 20, 20]);
        let mut seen = vec![0; 103];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.val.len() + f.test.len(), 103);
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(kfold_splits(4, 5, 0).is_err());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn summary_text_has_one_line_per_run() {
        let a = EvalReport::new("mink", "fold0", &[0.9, 0.1], &[true, false]).unwrap();
        let b = EvalReport::new("mink", "fold1", &[0.1, 0.9], &[true, false]).unwrap();
        let s = EvalSummary::new(vec![a, b]);
        assert_eq!(s.auc_mean, 0.5);
        assert_eq!(s.to_text().lines().count(), 3);
    }
}
