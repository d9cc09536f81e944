//! LLM output signatures: the raw token distribution sequence and the
//! compact per-sequence record built from it.
//!
//! A [`RawTds`] holds the full next-token distribution at every generation
//! step together with the token that was actually realized. A [`LosRecord`]
//! keeps only what the detectors consume: the top-K sorted probabilities of
//! each row, the actual-token probability (ATP), its rank inside the row and,
//! optionally, the mean/std of the row's log-likelihood under itself.
//!
//! Padded positions carry the sentinel [`PAD`] in every per-token float
//! array. Validity masks are never stored; a position is valid iff its ATP is
//! non-negative.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Sentinel for padded per-token float entries.
pub const PAD: f32 = -1.0;

/// Sentinel for padded rank entries.
pub const RANK_PAD: u32 = u32::MAX;

/// Meta key holding the vocabulary size at extraction time.
pub const META_VOCAB: &str = "vocab_size";

const ROW_SUM_TOL: f64 = 1e-4;
const TOPK_SUM_SLACK: f64 = 1e-5;

/// A full token distribution sequence: `n` rows over a vocabulary of `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTds {
    vocab: usize,
    probs: Vec<f64>,
    token_ids: Vec<usize>,
}

impl RawTds {
    /// Builds a TDS from row-major probabilities and realized token ids.
    ///
    /// Every row must be a probability distribution (entries non-negative,
    /// sum within 1e-4 of one). Token ids are checked lazily by the
    /// operations that index with them.
    pub fn new(probs: Vec<f64>, vocab: usize, token_ids: Vec<usize>) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::domain("vocabulary size must be positive"));
        }
        if probs.len() != vocab * token_ids.len() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} steps over a vocabulary of {}",
                probs.len(),
                token_ids.len(),
                vocab
            )));
        }
        for (i, row) in probs.chunks_exact(vocab).enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::domain(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { vocab, probs, token_ids })
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    fn checked_token(&self, i: usize) -> Result<usize> {
        let t = self.token_ids[i];
        if t >= self.vocab {
            return Err(Error::domain(format!("token id {t} at step {i} is outside the vocabulary of {}", self.vocab)));
        }
        Ok(t)
    }
}

/// Descending by value, ascending by column index on ties.
fn desc_then_index(row: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Row-sorts the TDS and keeps the `k` largest entries of every row.
///
/// Rows are returned row-major, `n × k`, each non-increasing. When `k`
/// exceeds the vocabulary the tail of every row is filled with [`PAD`].
pub fn topk_sort(raw: &RawTds, k: usize) -> Result<Vec<f32>> {
    if raw.seq_len() == 0 {
        return Err(Error::domain("cannot preprocess an empty sequence"));
    }
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let take = k.min(raw.vocab);
    let mut out = Vec::with_capacity(raw.seq_len() * k);
    let mut idx: Vec<usize> = Vec::with_capacity(raw.vocab);
    for i in 0..raw.seq_len() {
        let row = raw.row(i);
        idx.clear();
        idx.extend(0..raw.vocab);
        let cmp = desc_then_index(row);
        if take < raw.vocab {
            idx.select_nth_unstable_by(take - 1, &cmp);
        }
        idx[..take].sort_unstable_by(&cmp);
        out.extend(idx[..take].iter().map(|&j| row[j] as f32));
        out.extend(std::iter::repeat(PAD).take(k - take));
    }
    Ok(out)
}

/// Number of vocabulary entries strictly more probable than the actual token.
pub fn compute_ranks(raw: &RawTds) -> Result<Vec<u32>> {
    (0..raw.seq_len())
        .map(|i| {
            let t = raw.checked_token(i)?;
            let row = raw.row(i);
            let p = row[t];
            Ok(row.iter().filter(|&&x| x > p).count() as u32)
        })
        .collect()
}

/// Probability assigned to the realized token at every step.
pub fn extract_atp(raw: &RawTds) -> Result<Vec<f32>> {
    (0..raw.seq_len())
        .map(|i| {
            let t = raw.checked_token(i)?;
            Ok(raw.row(i)[t] as f32)
        })
        .collect()
}

/// Mean per-row probability mass retained by a truncated `n × k` matrix.
///
/// Sentinel entries do not contribute mass, and rows that are entirely
/// padding are not counted.
pub fn captured_mass(topk: &[f32], k: usize) -> Result<f64> {
    if k == 0 || topk.len() % k != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of width {k}", topk.len())));
    }
    let mut rows = 0usize;
    let mut total = 0.0f64;
    for row in topk.chunks_exact(k) {
        if row[0] < 0.0 {
            continue;
        }
        rows += 1;
        total += row.iter().filter(|&&x| x >= 0.0).map(|&x| f64::from(x)).sum::<f64>();
    }
    if rows == 0 {
        return Err(Error::domain("captured mass of an empty sequence"));
    }
    Ok(total / rows as f64)
}

/// One sequence's output signature in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct LosRecord {
    /// Width of every top-K row.
    pub k: usize,
    /// Row-major `seq_len × k`, rows non-increasing.
    pub topk: Vec<f32>,
    pub atp: Vec<f32>,
    pub ranks: Option<Vec<u32>>,
    pub mu: Option<Vec<f32>>,
    pub sigma: Option<Vec<f32>>,
    pub label: Option<bool>,
    pub group_id: Option<String>,
    pub meta: BTreeMap<String, String>,
}

impl LosRecord {
    /// Preprocesses a full TDS into a record.
    ///
    /// Per-token `mu`/`sigma` are computed over the full row so that Min-K%++
    /// runs in its exact mode.
    pub fn from_raw(raw: &RawTds, k: usize, eps_floor: f64) -> Result<Self> {
        let topk = topk_sort(raw, k)?;
        let atp = extract_atp(raw)?;
        let ranks = compute_ranks(raw)?;
        let (mu, sigma): (Vec<f32>, Vec<f32>) = (0..raw.seq_len())
            .map(|i| {
                let (m, s) = crate::gsf::row_log_stats(raw.row(i).iter().copied(), eps_floor);
                (m as f32, s as f32)
            })
            .unzip();
        let mut meta = BTreeMap::new();
        meta.insert(META_VOCAB.to_string(), raw.vocab().to_string());
        Ok(Self {
            k,
            topk,
            atp,
            ranks: Some(ranks),
            mu: Some(mu),
            sigma: Some(sigma),
            label: None,
            group_id: None,
            meta,
        })
    }

    /// Number of stored steps, padding included.
    pub fn seq_len(&self) -> usize {
        self.atp.len()
    }

    pub fn is_valid_position(&self, i: usize) -> bool {
        self.atp[i] >= 0.0
    }

    /// Number of non-padded steps.
    pub fn valid_len(&self) -> usize {
        self.atp.iter().filter(|&&p| p >= 0.0).count()
    }

    pub fn topk_row(&self, i: usize) -> &[f32] {
        &self.topk[i * self.k..(i + 1) * self.k]
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.meta.get(META_VOCAB).and_then(|v| v.parse().ok())
    }

    pub fn has_token_stats(&self) -> bool {
        self.mu.is_some() && self.sigma.is_some()
    }

    /// Mean retained mass when only the first `k` columns are kept.
    pub fn mass_at(&self, k: usize) -> Result<f64> {
        let k = k.min(self.k);
        let cols: Vec<f32> = (0..self.seq_len()).flat_map(|i| self.topk_row(i)[..k].iter().copied()).collect();
        captured_mass(&cols, k)
    }

    /// Copy keeping only the `k` most probable entries of every row.
    /// Stored token statistics are kept as they describe the full row.
    pub fn with_top(&self, k: usize) -> LosRecord {
        let k = k.min(self.k);
        LosRecord {
            k,
            topk: (0..self.seq_len()).flat_map(|i| self.topk_row(i)[..k].iter().copied()).collect(),
            ..self.clone()
        }
    }

    /// Copy with only the valid positions, in order.
    pub fn compacted(&self) -> LosRecord {
        let keep: Vec<usize> = (0..self.seq_len()).filter(|&i| self.is_valid_position(i)).collect();
        let pick = |v: &Vec<f32>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        LosRecord {
            k: self.k,
            topk: keep.iter().flat_map(|&i| self.topk_row(i).iter().copied()).collect(),
            atp: pick(&self.atp),
            ranks: self.ranks.as_ref().map(|r| keep.iter().map(|&i| r[i]).collect()),
            mu: self.mu.as_ref().map(pick),
            sigma: self.sigma.as_ref().map(pick),
            label: self.label,
            group_id: self.group_id.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Lists every invariant violation; empty means the record is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.seq_len();
        if n == 0 {
            out.push("record has no steps".to_string());
        }
        if self.k == 0 {
            out.push("top-K width is zero".to_string());
        }
        if self.topk.len() != n * self.k {
            out.push(format!("topk holds {} values, expected {}", self.topk.len(), n * self.k));
            return out;
        }
        for (name, len) in [
            ("ranks", self.ranks.as_ref().map(Vec::len)),
            ("mu", self.mu.as_ref().map(Vec::len)),
            ("sigma", self.sigma.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != n {
                    out.push(format!("{name} has length {len}, expected {n}"));
                    return out;
                }
            }
        }
        let vocab = self.vocab_size();
        for i in (0..n).filter(|&i| self.is_valid_position(i)) {
            let row = self.topk_row(i);
            if row.windows(2).any(|w| w[1] > w[0] && w[1] >= 0.0) {
                out.push(format!("row {i} is not sorted descending"));
            }
            if row.iter().any(|&x| !(x == PAD || (0.0..=1.0).contains(&x))) {
                out.push(format!("row {i} has an entry outside [0,1]"));
            }
            let sum: f64 = row.iter().filter(|&&x| x >= 0.0).map(|&x| f64::from(x)).sum();
            if sum > 1.0 + TOPK_SUM_SLACK {
                out.push(format!("row {i} sums to {sum} > 1"));
            }
            if !(self.atp[i] <= 1.0) {
                out.push(format!("atp[{i}] = {} outside [0,1]", self.atp[i]));
            }
            if let (Some(r), Some(v)) = (&self.ranks, vocab) {
                if r[i] as usize >= v {
                    out.push(format!("rank[{i}] = {} not below vocabulary size {v}", r[i]));
                }
            }
            if let Some(s) = &self.sigma {
                if !(s[i] >= 0.0) {
                    out.push(format!("sigma[{i}] = {} is negative", s[i]));
                }
            }
            if let Some(m) = &self.mu {
                if !m[i].is_finite() {
                    out.push(format!("mu[{i}] is not finite"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Domain(v)),
        }
    }
}

/// Truncates or pads every per-token array to exactly `n_max` steps.
pub fn pad_to(record: &LosRecord, n_max: usize) -> LosRecord {
    let n = record.seq_len();
    let mut out = record.clone();
    if n >= n_max {
        out.topk.truncate(n_max * record.k);
        out.atp.truncate(n_max);
        for v in [&mut out.mu, &mut out.sigma].into_iter().flatten() {
            v.truncate(n_max);
        }
        if let Some(r) = &mut out.ranks {
            r.truncate(n_max);
        }
    } else {
        out.topk.resize(n_max * record.k, PAD);
        out.atp.resize(n_max, PAD);
        for v in [&mut out.mu, &mut out.sigma].into_iter().flatten() {
            v.resize(n_max, PAD);
        }
        if let Some(r) = &mut out.ranks {
            r.resize(n_max, RANK_PAD);
        }
    }
    out
}
