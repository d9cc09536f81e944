//! Gated scoring functions and the heuristic detectors they generalize.
//!
//! A gated scoring function combines three maps over a signature: a
//! per-token confidence, a scalar threshold and a per-token weight. The score
//! is the sum of the weights of every token whose confidence clears the
//! threshold. [`GsfSpec`] is the generic engine; [`Method`] names the six
//! classic detectors, each available both as a direct scorer and as a
//! [`GsfSpec`] construction that must agree with it.
//!
//! All scores follow the convention "higher = positive class": member-like
//! for contamination detection, confident for hallucination detection.
//! Padded positions are dropped before any reduction.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::signature::LosRecord;

pub const DEFAULT_EPS_FLOOR: f64 = 1e-12;
pub const DEFAULT_EPS_SIGMA: f64 = 1e-8;

/// Transform applied to actual-token probabilities before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Prob,
    LogProb,
    Logit,
}

impl Scale {
    pub fn apply(self, p: f64, eps_floor: f64) -> f64 {
        match self {
            Scale::Prob => p,
            Scale::LogProb => p.max(eps_floor).ln(),
            Scale::Logit => {
                let x = p.clamp(eps_floor, 1.0 - eps_floor);
                (x / (1.0 - x)).ln()
            }
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" => Ok(Scale::Prob),
            "log_prob" => Ok(Scale::LogProb),
            "logit" => Ok(Scale::Logit),
            other => Err(Error::Config(format!("unknown scale {other:?}"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Prob => "prob",
            Scale::LogProb => "log_prob",
            Scale::Logit => "logit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsfConfig {
    /// Percentage of lowest-scoring tokens kept by the Min-K% family.
    pub k_frac: f64,
    /// Floor applied to probabilities before taking logs.
    pub eps_floor: f64,
    /// Added to the standard deviation in the Min-K%++ normalization.
    pub eps_sigma: f64,
    pub scale: Scale,
}

impl Default for GsfConfig {
    fn default() -> Self {
        Self { k_frac: 20.0, eps_floor: DEFAULT_EPS_FLOOR, eps_sigma: DEFAULT_EPS_SIGMA, scale: Scale::Prob }
    }
}

impl GsfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_frac > 0.0 && self.k_frac <= 100.0) {
            return Err(Error::Config(format!("k_frac must lie in (0, 100], got {}", self.k_frac)));
        }
        if !(self.eps_floor > 0.0 && self.eps_floor < 1.0) || !(self.eps_sigma > 0.0) {
            return Err(Error::Config("epsilons must be positive (and eps_floor < 1)".into()));
        }
        Ok(())
    }

    /// Size of the Min-K% selection for a sequence of `n` tokens: `⌈k_frac·n/100⌉`.
    pub fn selected(&self, n: usize) -> usize {
        let exact = self.k_frac * n as f64 / 100.0;
        ((exact - 1e-9).ceil() as usize).clamp(1, n.max(1))
    }

    fn log_p(&self, p: f64) -> f64 {
        p.max(self.eps_floor).ln()
    }
}

fn valid_atp(atp: &[f32]) -> Vec<f64> {
    atp.iter().filter(|&&p| p >= 0.0).map(|&p| f64::from(p)).collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Mean of the `m` smallest values, summed in ascending order.
fn mean_of_smallest(values: Vec<f64>, m: usize) -> f64 {
    let v = sorted(values);
    v[..m].iter().sum::<f64>() / m as f64
}

fn nonempty(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() {
        Err(Error::domain("cannot score an empty sequence"))
    } else {
        Ok(v)
    }
}

/// Mean, min or max of the scaled actual-token probabilities.
pub fn aggregate_score(atp: &[f32], mode: Aggregate, scale: Scale) -> Result<f64> {
    let v = nonempty(valid_atp(atp))?;
    let v = sorted(v.into_iter().map(|p| scale.apply(p, DEFAULT_EPS_FLOOR)).collect());
    Ok(match mode {
        Aggregate::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Aggregate::Min => v[0],
        Aggregate::Max => v[v.len() - 1],
    })
}

/// Negated cross-entropy: mean log actual-token probability.
pub fn loss_score(atp: &[f32], cfg: &GsfConfig) -> Result<f64> {
    let v = nonempty(valid_atp(atp))?;
    let n = v.len();
    Ok(mean_of_smallest(v.into_iter().map(|p| cfg.log_p(p)).collect(), n))
}

/// Min-K%: mean log-probability of the `⌈k_frac·N/100⌉` least likely tokens.
pub fn mink_score(atp: &[f32], cfg: &GsfConfig) -> Result<f64> {
    let v = nonempty(valid_atp(atp))?;
    let m = cfg.selected(v.len());
    Ok(mean_of_smallest(v.into_iter().map(|p| cfg.log_p(p)).collect(), m))
}

pub(crate) fn row_log_stats(row: impl Iterator<Item = f64> + Clone, eps_floor: f64) -> (f64, f64) {
    let live = row.filter(|&x| x >= 0.0);
    let mu: f64 = live.clone().map(|x| x * x.max(eps_floor).ln()).sum();
    let var: f64 = live
        .map(|x| {
            let d = x.max(eps_floor).ln() - mu;
            x * d * d
        })
        .sum();
    (mu, var.max(0.0).sqrt())
}

/// Mean and standard deviation of a distribution's log-likelihood under
/// itself, over the entries present in `row` (sentinels skipped).
pub fn token_stats(row: &[f32], cfg: &GsfConfig) -> (f64, f64) {
    row_log_stats(row.iter().map(|&x| f64::from(x)), cfg.eps_floor)
}

/// Fills `mu`/`sigma` from the stored top-K rows.
///
/// Truncated rows bias both statistics; records extracted with full-vocabulary
/// statistics should keep theirs.
pub fn fill_token_stats(record: &LosRecord, cfg: &GsfConfig) -> Result<LosRecord> {
    if record.k == 0 || record.topk.is_empty() {
        return Err(Error::domain("record has neither token statistics nor top-K rows"));
    }
    let mut out = record.clone();
    let (mu, sigma) = (0..record.seq_len())
        .map(|i| {
            if record.is_valid_position(i) {
                let (m, s) = token_stats(record.topk_row(i), cfg);
                (m as f32, s as f32)
            } else {
                (crate::signature::PAD, crate::signature::PAD)
            }
        })
        .unzip();
    out.mu = Some(mu);
    out.sigma = Some(sigma);
    Ok(out)
}

/// Per-token calibrated log-probabilities `(ln p - mu) / (sigma + eps_sigma)`
/// over the valid positions. The flag is true when statistics had to be
/// recomputed from truncated rows.
pub fn normalized_log_probs(record: &LosRecord, cfg: &GsfConfig) -> Result<(Vec<f64>, bool)> {
    let (rec, approximate) = if record.has_token_stats() {
        (std::borrow::Cow::Borrowed(record), false)
    } else {
        (std::borrow::Cow::Owned(fill_token_stats(record, cfg)?), true)
    };
    let mu = rec.mu.as_ref().expect("stats present");
    let sigma = rec.sigma.as_ref().expect("stats present");
    let v = (0..rec.seq_len())
        .filter(|&i| rec.is_valid_position(i))
        .map(|i| {
            let m = f64::from(mu[i]);
            let mut num = cfg.log_p(f64::from(rec.atp[i])) - m;
            // mu is stored as f32; gaps below its resolution are rounding.
            if num.abs() <= f64::from(f32::EPSILON) * m.abs() {
                num = 0.0;
            }
            num / (f64::from(sigma[i]) + cfg.eps_sigma)
        })
        .collect();
    Ok((v, approximate))
}

/// Min-K%++: Min-K% over the calibrated log-probabilities.
pub fn minkpp_score(record: &LosRecord, cfg: &GsfConfig) -> Result<f64> {
    let (v, _) = normalized_log_probs(record, cfg)?;
    let v = nonempty(v)?;
    let m = cfg.selected(v.len());
    Ok(mean_of_smallest(v, m))
}

type TokenFn = Box<dyn Fn(&LosRecord) -> Result<Vec<f64>> + Send + Sync>;
type ThresholdFn = Box<dyn Fn(&LosRecord) -> Result<f64> + Send + Sync>;

/// A (confidence, threshold, weight) triple.
///
/// Each map receives the record with padded positions already removed.
pub struct GsfSpec {
    kappa: TokenFn,
    threshold: ThresholdFn,
    weight: TokenFn,
}

impl fmt::Debug for GsfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GsfSpec { .. }")
    }
}

fn scaled_atp(rec: &LosRecord, scale: Scale, eps: f64) -> Vec<f64> {
    rec.atp.iter().map(|&p| scale.apply(f64::from(p), eps)).collect()
}

/// The `m`-th smallest value (1-based).
fn order_stat(v: &[f64], m: usize) -> f64 {
    sorted(v.to_vec())[m - 1]
}

fn neg(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| -x).collect()
}

impl GsfSpec {
    pub fn new<K, T, G>(kappa: K, threshold: T, weight: G) -> Self
    where
        K: Fn(&LosRecord) -> Result<Vec<f64>> + Send + Sync + 'static,
        T: Fn(&LosRecord) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&LosRecord) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        Self { kappa: Box::new(kappa), threshold: Box::new(threshold), weight: Box::new(weight) }
    }

    /// κ ≡ 1, T = 0, g = s(p)/N.
    pub fn mean(scale: Scale, eps_floor: f64) -> Self {
        Self::new(
            |r| Ok(vec![1.0; r.seq_len()]),
            |_| Ok(0.0),
            move |r| {
                let n = r.seq_len() as f64;
                Ok(scaled_atp(r, scale, eps_floor).into_iter().map(|x| x / n).collect())
            },
        )
    }

    /// κ = -s(p), T = -min s(p), g = s(p).
    pub fn min(scale: Scale, eps_floor: f64) -> Self {
        Self::new(
            move |r| Ok(neg(scaled_atp(r, scale, eps_floor))),
            move |r| {
                let v = scaled_atp(r, scale, eps_floor);
                Ok(-v.iter().copied().fold(f64::INFINITY, f64::min))
            },
            move |r| Ok(scaled_atp(r, scale, eps_floor)),
        )
    }

    /// κ = s(p), T = max s(p), g = s(p).
    pub fn max(scale: Scale, eps_floor: f64) -> Self {
        Self::new(
            move |r| Ok(scaled_atp(r, scale, eps_floor)),
            move |r| {
                let v = scaled_atp(r, scale, eps_floor);
                Ok(v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            },
            move |r| Ok(scaled_atp(r, scale, eps_floor)),
        )
    }

    /// κ ≡ 1, T = 0, g = ln(p)/N.
    pub fn loss(cfg: GsfConfig) -> Self {
        Self::new(
            |r| Ok(vec![1.0; r.seq_len()]),
            |_| Ok(0.0),
            move |r| {
                let n = r.seq_len() as f64;
                Ok(scaled_atp(r, Scale::LogProb, cfg.eps_floor).into_iter().map(|x| x / n).collect())
            },
        )
    }

    /// κ = -p, T = -(m-th smallest p), g = ln(p)/m.
    pub fn mink(cfg: GsfConfig) -> Self {
        Self::new(
            |r| Ok(neg(scaled_atp(r, Scale::Prob, 0.0))),
            move |r| Ok(-order_stat(&scaled_atp(r, Scale::Prob, 0.0), cfg.selected(r.seq_len()))),
            move |r| {
                let m = cfg.selected(r.seq_len()) as f64;
                Ok(scaled_atp(r, Scale::LogProb, cfg.eps_floor).into_iter().map(|x| x / m).collect())
            },
        )
    }

    /// κ = -p̄, T = -(m-th smallest p̄), g = p̄/m with p̄ the calibrated
    /// log-probabilities.
    pub fn minkpp(cfg: GsfConfig) -> Self {
        Self::new(
            move |r| Ok(neg(normalized_log_probs(r, &cfg)?.0)),
            move |r| {
                let (v, _) = normalized_log_probs(r, &cfg)?;
                Ok(-order_stat(&v, cfg.selected(v.len())))
            },
            move |r| {
                let (v, _) = normalized_log_probs(r, &cfg)?;
                let m = cfg.selected(v.len()) as f64;
                Ok(v.into_iter().map(|x| x / m).collect())
            },
        )
    }
}

/// Sum of the weights of every token whose confidence reaches the threshold.
pub fn gsf_apply(spec: &GsfSpec, record: &LosRecord) -> Result<f64> {
    let rec = record.compacted();
    let n = rec.seq_len();
    if n == 0 {
        return Err(Error::domain("cannot score an empty sequence"));
    }
    let kappa = (spec.kappa)(&rec)?;
    let threshold = (spec.threshold)(&rec)?;
    let weight = (spec.weight)(&rec)?;
    if kappa.len() != n || weight.len() != n {
        return Err(Error::Shape(format!("confidence/weight lengths {}/{} for {n} tokens", kappa.len(), weight.len())));
    }
    if kappa.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { component: "confidence" });
    }
    if !threshold.is_finite() {
        return Err(Error::NonFinite { component: "threshold" });
    }
    if weight.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { component: "weight" });
    }
    Ok(kappa.iter().zip(&weight).filter(|(&k, _)| k >= threshold).map(|(_, &g)| g).sum())
}

/// The heuristic detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mean,
    Min,
    Max,
    Loss,
    MinK,
    MinKpp,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Mean, Method::Min, Method::Max, Method::Loss, Method::MinK, Method::MinKpp];

    /// Direct implementation.
    pub fn score(self, record: &LosRecord, cfg: &GsfConfig) -> Result<f64> {
        match self {
            Method::Mean => aggregate_score(&record.atp, Aggregate::Mean, cfg.scale),
            Method::Min => aggregate_score(&record.atp, Aggregate::Min, cfg.scale),
            Method::Max => aggregate_score(&record.atp, Aggregate::Max, cfg.scale),
            Method::Loss => loss_score(&record.atp, cfg),
            Method::MinK => mink_score(&record.atp, cfg),
            Method::MinKpp => minkpp_score(record, cfg),
        }
    }

    /// The same detector expressed as a gated scoring function.
    pub fn gsf(self, cfg: &GsfConfig) -> GsfSpec {
        match self {
            Method::Mean => GsfSpec::mean(cfg.scale, cfg.eps_floor),
            Method::Min => GsfSpec::min(cfg.scale, cfg.eps_floor),
            Method::Max => GsfSpec::max(cfg.scale, cfg.eps_floor),
            Method::Loss => GsfSpec::loss(*cfg),
            Method::MinK => GsfSpec::mink(*cfg),
            Method::MinKpp => GsfSpec::minkpp(*cfg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::Min => "min",
            Method::Max => "max",
            Method::Loss => "loss",
            Method::MinK => "mink",
            Method::MinKpp => "minkpp",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{pad_to, RawTds};

    fn record_from_atp(atp: &[f32]) -> LosRecord {
        LosRecord {
            k: 1,
            topk: atp.to_vec(),
            atp: atp.to_vec(),
            ranks: Some(vec![0; atp.len()]),
            mu: None,
            sigma: None,
            label: None,
            group_id: None,
            meta: Default::default(),
        }
    }

    #[test]
    fn gsf_mean_and_min_constructions() {
        let r = record_from_atp(&[0.2, 0.4, 0.6]);
        let s = gsf_apply(&GsfSpec::mean(Scale::Prob, 1e-12), &r).unwrap();
        assert!((s - 0.4).abs() < 1e-7);
        let r = record_from_atp(&[0.3, 0.1, 0.5]);
        let s = gsf_apply(&GsfSpec::min(Scale::Prob, 1e-12), &r).unwrap();
        assert!((s - 0.1).abs() < 1e-7);
    }

    #[test]
    fn gsf_rejects_non_finite_components() {
        let r = record_from_atp(&[0.5]);
        let spec = GsfSpec::new(|r| Ok(vec![1.0; r.seq_len()]), |_| Ok(f64::NAN), |r| Ok(vec![1.0; r.seq_len()]));
        assert!(matches!(gsf_apply(&spec, &r), Err(Error::NonFinite { component: "threshold" })));
        let spec = GsfSpec::new(|r| Ok(vec![1.0; r.seq_len()]), |_| Ok(0.0), |r| Ok(vec![f64::INFINITY; r.seq_len()]));
        assert!(matches!(gsf_apply(&spec, &r), Err(Error::NonFinite { component: "weight" })));
    }

    #[test]
    fn gsf_ignores_padding() {
        let r = record_from_atp(&[0.2, 0.4, 0.6]);
        let padded = pad_to(&r, 6);
        let spec = GsfSpec::mean(Scale::Prob, 1e-12);
        assert_eq!(gsf_apply(&spec, &r).unwrap(), gsf_apply(&spec, &padded).unwrap());
    }

    #[test]
    fn aggregate_examples() {
        assert!((aggregate_score(&[0.2, 0.4, 0.6], Aggregate::Mean, Scale::Prob).unwrap() - 0.4).abs() < 1e-7);
        assert!((aggregate_score(&[0.7], Aggregate::Max, Scale::Prob).unwrap() - 0.7).abs() < 1e-7);
        // (ln 0.5 + ln 0.25) / 2 = -1.5 ln 2
        let v = aggregate_score(&[0.5, 0.25], Aggregate::Mean, Scale::LogProb).unwrap();
        assert!((v - (-1.039_720_770_839_917_9)).abs() < 1e-12);
        assert!(aggregate_score(&[], Aggregate::Mean, Scale::Prob).is_err());
    }

    #[test]
    fn logit_scale_is_finite_at_extremes() {
        for p in [0.0f32, 1.0] {
            let v = aggregate_score(&[p], Aggregate::Mean, Scale::Logit).unwrap();
            assert!(v.is_finite());
        }
    }

    #[test]
    fn loss_examples() {
        let cfg = GsfConfig::default();
        assert_eq!(loss_score(&[1.0, 1.0, 1.0], &cfg).unwrap(), 0.0);
        let e = (-1.0f64).exp() as f32;
        let v = loss_score(&[e, e], &cfg).unwrap();
        assert!((v + 1.0).abs() < 1e-7);
        assert!(loss_score(&[0.0], &cfg).unwrap().is_finite());
    }

    #[test]
    fn mink_examples() {
        let cfg = GsfConfig { k_frac: 50.0, ..GsfConfig::default() };
        let v = mink_score(&[0.8, 0.1, 0.2, 0.4], &cfg).unwrap();
        let expected = (f64::from(0.1f32).ln() + f64::from(0.2f32).ln()) / 2.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 1.956).abs() < 1e-3);

        let full = GsfConfig { k_frac: 100.0, ..GsfConfig::default() };
        let atp = [0.8, 0.1, 0.2, 0.4, 0.33];
        assert_eq!(mink_score(&atp, &full).unwrap(), loss_score(&atp, &full).unwrap());

        let single = mink_score(&[0.3], &GsfConfig { k_frac: 1.0, ..cfg }).unwrap();
        assert_eq!(single, f64::from(0.3f32).ln());
    }

    #[test]
    fn selection_size_is_ceiling() {
        let cfg = GsfConfig { k_frac: 70.0, ..GsfConfig::default() };
        assert_eq!(cfg.selected(10), 7);
        assert_eq!(cfg.selected(11), 8);
        assert_eq!(GsfConfig { k_frac: 1.0, ..cfg }.selected(3), 1);
    }

    #[test]
    fn token_stats_examples() {
        let cfg = GsfConfig::default();
        let (mu, sigma) = token_stats(&[0.5, 0.5], &cfg);
        assert!((mu - 0.5f64.ln()).abs() < 1e-12 && sigma.abs() < 1e-12);
        assert_eq!(token_stats(&[1.0], &cfg), (0.0, 0.0));

        let row = [0.7f32, 0.2, 0.1];
        let (mu, sigma) = token_stats(&row, &cfg);
        let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let m = x[0] * x[0].ln() + x[1] * x[1].ln() + x[2] * x[2].ln();
        let s =
            (x[0] * (x[0].ln() - m).powi(2) + x[1] * (x[1].ln() - m).powi(2) + x[2] * (x[2].ln() - m).powi(2)).sqrt();
        assert!((mu - m).abs() < 1e-12 && (sigma - s).abs() < 1e-12);
        assert_eq!(token_stats(&[0.7, 0.3, -1.0], &cfg), token_stats(&[0.7, 0.3], &cfg));
    }

    #[test]
    fn minkpp_zero_numerator() {
        let raw = RawTds::new(vec![0.5, 0.5], 2, vec![0]).unwrap();
        let rec = LosRecord::from_raw(&raw, 2, 1e-12).unwrap();
        for eps_sigma in [1e-8, 1e-3, 1.0] {
            let cfg = GsfConfig { eps_sigma, ..GsfConfig::default() };
            assert!(minkpp_score(&rec, &cfg).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn minkpp_affine_reduction() {
        let mut r = record_from_atp(&[0.3, 0.6, 0.05]);
        r.mu = Some(vec![-1.2; 3]);
        r.sigma = Some(vec![0.7; 3]);
        let cfg = GsfConfig { k_frac: 100.0, ..GsfConfig::default() };
        let loss = loss_score(&r.atp, &cfg).unwrap();
        let expected = (loss - f64::from(-1.2f32)) / (f64::from(0.7f32) + cfg.eps_sigma);
        assert!((minkpp_score(&r, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn minkpp_without_stats_or_rows_is_an_error() {
        let mut r = record_from_atp(&[0.3]);
        r.k = 0;
        r.topk.clear();
        assert!(minkpp_score(&r, &GsfConfig::default()).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("median".parse::<Method>().is_err());
    }
}
