//! Forward and backward passes.
//!
//! Only the valid (non-padded) positions of a record are fed to the network,
//! so attention and pooling never see padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Arch, ModelKind, RankMode};
use super::params::{EncoderLayer, ModelParams};
use super::tensor::{add_at_b, add_col_sums, affine, axpy, c, dot, matmul, matmul_bt, transpose, Mat, Scalar};
use crate::error::{Error, Result};
use crate::signature::LosRecord;

const LN_EPS: f64 = 1e-5;
/// Records per gradient work unit. Fixed so that summation order, and
/// therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Network inputs for one record.
#[derive(Debug, Clone)]
pub struct Inputs<T> {
    /// `n × k` top-K rows (empty for the ATP-only kinds).
    pub x: Mat<T>,
    pub atp: Vec<T>,
    pub ranks: Vec<u32>,
}

impl<T: Scalar> Inputs<T> {
    pub fn len(&self) -> usize {
        self.atp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atp.is_empty()
    }
}

/// Drops padded positions, keeps at most `n_max` leading steps and fits the
/// top-K rows to the model width (extra columns dropped, missing ones and
/// sentinels read as 0).
pub fn prepare<T: Scalar>(record: &LosRecord, arch: &Arch) -> Result<Inputs<T>> {
    let n_all = record.seq_len();
    if record.topk.len() != n_all * record.k {
        return Err(Error::Shape(format!("topk holds {} values, expected {n_all}x{}", record.topk.len(), record.k)));
    }
    let ranks =
        record.ranks.as_ref().ok_or_else(|| Error::domain("record has no ranks; the rank encoding needs them"))?;
    if ranks.len() != n_all {
        return Err(Error::Shape(format!("ranks has length {}, expected {n_all}", ranks.len())));
    }
    let keep: Vec<usize> = (0..n_all).filter(|&i| record.is_valid_position(i)).take(arch.n_max).collect();
    if keep.is_empty() {
        return Err(Error::domain("record has no valid steps"));
    }
    let x = if arch.kind.uses_topk() {
        let mut x = Mat::zeros(keep.len(), arch.k);
        let w = arch.k.min(record.k);
        for (row, &i) in keep.iter().enumerate() {
            for (dst, &v) in x.row_mut(row)[..w].iter_mut().zip(&record.topk_row(i)[..w]) {
                *dst = if v > 0.0 { c(f64::from(v)) } else { T::zero() };
            }
        }
        x
    } else {
        Mat::default()
    };
    Ok(Inputs {
        x,
        atp: keep.iter().map(|&i| c(f64::from(record.atp[i]))).collect(),
        ranks: keep.iter().map(|&i| ranks[i]).collect(),
    })
}

fn rank_scale<T: Scalar>(r: u32) -> T {
    c(1.0 / (1.0 + f64::from(r)))
}

/// The rank encoding, one row per step.
pub fn rank_encode<T: Scalar>(atp: &[T], ranks: &[u32], params: &ModelParams<T>) -> Result<Mat<T>> {
    if atp.len() != ranks.len() {
        return Err(Error::Shape(format!("{} probabilities but {} ranks", atp.len(), ranks.len())));
    }
    let arch = &params.arch;
    let mut out = Mat::zeros(atp.len(), arch.rank_dim);
    for (i, (&p, &r)) in atp.iter().zip(ranks).enumerate() {
        let row = out.row_mut(i);
        match arch.rank_mode {
            RankMode::Scaled => {
                axpy(p * rank_scale::<T>(r), &params.rank_w1.data, row);
                axpy(p, &params.rank_w2.data, row);
            }
            RankMode::Lookup => {
                let idx = (r as usize).min(arch.rank_cap);
                axpy(p, params.rank_table.row(idx), row);
            }
        }
    }
    Ok(out)
}

fn rank_encode_back<T: Scalar>(inp: &Inputs<T>, d_re: &Mat<T>, params: &ModelParams<T>, grads: &mut ModelParams<T>) {
    for (i, (&p, &r)) in inp.atp.iter().zip(&inp.ranks).enumerate() {
        let g = d_re.row(i);
        match params.arch.rank_mode {
            RankMode::Scaled => {
                axpy(p * rank_scale::<T>(r), g, &mut grads.rank_w1.data);
                axpy(p, g, &mut grads.rank_w2.data);
            }
            RankMode::Lookup => {
                let idx = (r as usize).min(params.arch.rank_cap);
                axpy(p, g, grads.rank_table.row_mut(idx));
            }
        }
    }
}

/// Dropout state for one forward pass.
struct Dropout<'a> {
    p: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    /// Multiplies `m` by an inverted-dropout mask and returns the mask.
    fn apply<T: Scalar>(&mut self, m: &mut Mat<T>) -> Vec<T> {
        let keep = c::<T>(1.0 / (1.0 - self.p));
        let mask: Vec<T> =
            (0..m.len()).map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep }).collect();
        m.data.iter_mut().zip(&mask).for_each(|(x, &k)| *x *= k);
        mask
    }
}

fn maybe_drop<T: Scalar>(drop: &mut Option<Dropout<'_>>, m: &mut Mat<T>) -> Option<Vec<T>> {
    drop.as_mut().filter(|d| d.p > 0.0).map(|d| d.apply(m))
}

fn apply_mask<T: Scalar>(g: &mut Mat<T>, mask: &Option<Vec<T>>) {
    if let Some(mask) = mask {
        g.data.iter_mut().zip(mask).for_each(|(x, &k)| *x *= k);
    }
}

struct LnCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

fn layer_norm<T: Scalar>(z: &Mat<T>, g: &Mat<T>, b: &Mat<T>) -> (Mat<T>, LnCache<T>) {
    let d = c::<T>(z.cols as f64);
    let mut xhat = Mat::zeros(z.rows, z.cols);
    let mut out = Mat::zeros(z.rows, z.cols);
    let mut inv_std = Vec::with_capacity(z.rows);
    for i in 0..z.rows {
        let row = z.row(i);
        let mean = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / d;
        let inv = T::one() / (var + c(LN_EPS)).sqrt();
        inv_std.push(inv);
        for j in 0..z.cols {
            let xh = (row[j] - mean) * inv;
            xhat.data[i * z.cols + j] = xh;
            out.data[i * z.cols + j] = xh * g.data[j] + b.data[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_back<T: Scalar>(dy: &Mat<T>, cache: &LnCache<T>, g: &Mat<T>, dg: &mut Mat<T>, db: &mut Mat<T>) -> Mat<T> {
    let cols = dy.cols;
    let d = c::<T>(cols as f64);
    let mut dz = Mat::zeros(dy.rows, cols);
    let mut dxhat = vec![T::zero(); cols];
    for i in 0..dy.rows {
        let gy = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..cols {
            dg.data[j] += gy[j] * xh[j];
            db.data[j] += gy[j];
            dxhat[j] = gy[j] * g.data[j];
        }
        let s1: T = dxhat.iter().copied().sum();
        let s2 = dot(&dxhat, xh);
        let inv = cache.inv_std[i] / d;
        for (j, o) in dz.row_mut(i).iter_mut().enumerate() {
            *o = inv * (d * dxhat[j] - s1 - xh[j] * s2);
        }
    }
    dz
}

fn relu<T: Scalar>(m: &Mat<T>) -> Mat<T> {
    Mat::from_vec(m.rows, m.cols, m.data.iter().map(|&x| x.max(T::zero())).collect())
}

fn relu_back<T: Scalar>(g: &mut Mat<T>, pre: &Mat<T>) {
    g.data.iter_mut().zip(&pre.data).for_each(|(x, &z)| {
        if z <= T::zero() {
            *x = T::zero();
        }
    });
}

fn slice_cols<T: Scalar>(m: &Mat<T>, start: usize, width: usize) -> Mat<T> {
    let mut out = Mat::zeros(m.rows, width);
    for i in 0..m.rows {
        out.row_mut(i).copy_from_slice(&m.row(i)[start..start + width]);
    }
    out
}

fn add_cols<T: Scalar>(dst: &mut Mat<T>, src: &Mat<T>, start: usize) {
    for i in 0..src.rows {
        axpy(T::one(), src.row(i), &mut dst.row_mut(i)[start..start + src.cols]);
    }
}

/// Transposed weights, built once per batch for the backward pass.
struct WeightsT<T> {
    /// Per layer: wq, wk, wv, wo, ff1_w, ff2_w.
    layers: Vec<[Mat<T>; 6]>,
    mlp1: Mat<T>,
    mlp2: Mat<T>,
}

impl<T: Scalar> WeightsT<T> {
    fn new(p: &ModelParams<T>) -> Self {
        Self {
            layers: p.layers.iter().map(|l| [&l.wq, &l.wk, &l.wv, &l.wo, &l.ff1_w, &l.ff2_w].map(transpose)).collect(),
            mlp1: transpose(&p.mlp1_w),
            mlp2: transpose(&p.mlp2_w),
        }
    }
}

struct LayerCache<T> {
    h_in: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// Softmax output per head, before dropout.
    probs: Vec<Mat<T>>,
    prob_masks: Vec<Option<Vec<T>>>,
    /// Dropped-out probabilities per head.
    probs_d: Vec<Mat<T>>,
    o: Mat<T>,
    ln1: LnCache<T>,
    h1: Mat<T>,
    f1: Mat<T>,
    act_mask: Option<Vec<T>>,
    act_d: Mat<T>,
    ln2: LnCache<T>,
}

fn softmax_rows<T: Scalar>(s: &mut Mat<T>) {
    for i in 0..s.rows {
        let row = s.row_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
}

fn layer_forward<T: Scalar>(
    l: &EncoderLayer<T>,
    h: Mat<T>,
    heads: usize,
    drop: &mut Option<Dropout<'_>>,
) -> (Mat<T>, LayerCache<T>) {
    let d = h.cols;
    let dh = d / heads;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let q = affine(&h, &l.wq, &l.bq);
    let k = affine(&h, &l.wk, &l.bk);
    let v = affine(&h, &l.wv, &l.bv);
    let mut o = Mat::zeros(h.rows, d);
    let mut probs = Vec::with_capacity(heads);
    let mut prob_masks = Vec::with_capacity(heads);
    let mut probs_d = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (qh, kh, vh) = (slice_cols(&q, hd * dh, dh), slice_cols(&k, hd * dh, dh), slice_cols(&v, hd * dh, dh));
        let mut s = matmul_bt(&qh, &kh);
        s.data.iter_mut().for_each(|x| *x *= scale);
        softmax_rows(&mut s);
        let mut pd = s.clone();
        let mask = maybe_drop(drop, &mut pd);
        add_cols(&mut o, &matmul(&pd, &vh), hd * dh);
        probs.push(s);
        prob_masks.push(mask);
        probs_d.push(pd);
    }
    let mut z1 = affine(&o, &l.wo, &l.bo);
    z1.add_assign(&h);
    let (h1, ln1) = layer_norm(&z1, &l.ln1_g, &l.ln1_b);
    let f1 = affine(&h1, &l.ff1_w, &l.ff1_b);
    let mut act_d = relu(&f1);
    let act_mask = maybe_drop(drop, &mut act_d);
    let mut z2 = affine(&act_d, &l.ff2_w, &l.ff2_b);
    z2.add_assign(&h1);
    let (out, ln2) = layer_norm(&z2, &l.ln2_g, &l.ln2_b);
    let cache = LayerCache { h_in: h, q, k, v, probs, prob_masks, probs_d, o, ln1, h1, f1, act_mask, act_d, ln2 };
    (out, cache)
}

/// Returns the gradient with respect to the layer input.
fn layer_backward<T: Scalar>(
    l: &EncoderLayer<T>,
    lt: &[Mat<T>; 6],
    g: &mut EncoderLayer<T>,
    cache: &LayerCache<T>,
    d_out: &Mat<T>,
    heads: usize,
) -> Mat<T> {
    let d = d_out.cols;
    let dh = d / heads;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());

    let dz2 = layer_norm_back(d_out, &cache.ln2, &l.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    add_at_b(&mut g.ff2_w, &cache.act_d, &dz2);
    add_col_sums(&mut g.ff2_b, &dz2);
    let mut df1 = matmul(&dz2, &lt[5]);
    apply_mask(&mut df1, &cache.act_mask);
    relu_back(&mut df1, &cache.f1);
    add_at_b(&mut g.ff1_w, &cache.h1, &df1);
    add_col_sums(&mut g.ff1_b, &df1);
    let mut dh1 = matmul(&df1, &lt[4]);
    dh1.add_assign(&dz2);

    let dz1 = layer_norm_back(&dh1, &cache.ln1, &l.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    add_at_b(&mut g.wo, &cache.o, &dz1);
    add_col_sums(&mut g.bo, &dz1);
    let d_o = matmul(&dz1, &lt[3]);

    let rows = d_out.rows;
    let (mut dq, mut dk, mut dv) = (Mat::zeros(rows, d), Mat::zeros(rows, d), Mat::zeros(rows, d));
    for hd in 0..heads {
        let qh = slice_cols(&cache.q, hd * dh, dh);
        let kh = slice_cols(&cache.k, hd * dh, dh);
        let vh = slice_cols(&cache.v, hd * dh, dh);
        let doh = slice_cols(&d_o, hd * dh, dh);
        let mut dvh = Mat::zeros(rows, dh);
        add_at_b(&mut dvh, &cache.probs_d[hd], &doh);
        let mut dp = matmul_bt(&doh, &vh);
        apply_mask(&mut dp, &cache.prob_masks[hd]);
        let p = &cache.probs[hd];
        for i in 0..rows {
            let pr = p.row(i);
            let s = dot(dp.row(i), pr);
            for (x, &pv) in dp.row_mut(i).iter_mut().zip(pr) {
                *x = pv * (*x - s) * scale;
            }
        }
        let dqh = matmul(&dp, &kh);
        let mut dkh = Mat::zeros(rows, dh);
        add_at_b(&mut dkh, &dp, &qh);
        add_cols(&mut dq, &dqh, hd * dh);
        add_cols(&mut dk, &dkh, hd * dh);
        add_cols(&mut dv, &dvh, hd * dh);
    }
    let mut dh = dz1;
    for (dm, wt, gw, gb) in
        [(&dq, &lt[0], &mut g.wq, &mut g.bq), (&dk, &lt[1], &mut g.wk, &mut g.bk), (&dv, &lt[2], &mut g.wv, &mut g.bv)]
    {
        add_at_b(gw, &cache.h_in, dm);
        add_col_sums(gb, dm);
        dh.add_assign(&matmul(dm, wt));
    }
    dh
}

enum Tape<T> {
    Encoder { inputs: Inputs<T>, layers: Vec<LayerCache<T>>, cls_out: Vec<T> },
    Mlp { inputs: Inputs<T>, re: Mat<T>, z1: Mat<T>, a1_mask: Option<Vec<T>>, a1_d: Mat<T>, z2: Mat<T>, pooled: Vec<T> },
}

fn check_arch<T: Scalar>(params: &ModelParams<T>) -> Result<()> {
    let a = &params.arch;
    if a.kind.is_transformer() && (a.heads == 0 || a.model_dim % a.heads != 0) {
        return Err(Error::Shape(format!("{} heads do not divide width {}", a.heads, a.model_dim)));
    }
    if params.head_w.len() != a.model_dim {
        return Err(Error::Shape("head does not match the model width".into()));
    }
    Ok(())
}

fn forward_tape<T: Scalar>(
    params: &ModelParams<T>,
    inputs: Inputs<T>,
    mut drop: Option<Dropout<'_>>,
) -> Result<(T, Tape<T>)> {
    let arch = &params.arch;
    let n = inputs.len();
    let re = rank_encode(&inputs.atp, &inputs.ranks, params)?;
    if arch.kind == ModelKind::AtpRMlp {
        let z1 = affine(&re, &params.mlp1_w, &params.mlp1_b);
        let mut a1_d = relu(&z1);
        let a1_mask = maybe_drop(&mut drop, &mut a1_d);
        let z2 = affine(&a1_d, &params.mlp2_w, &params.mlp2_b);
        let a2 = relu(&z2);
        let mut pooled = vec![T::zero(); arch.model_dim];
        let inv_n = c::<T>(1.0 / n as f64);
        for i in 0..n {
            axpy(inv_n, a2.row(i), &mut pooled);
        }
        let logit = dot(&pooled, &params.head_w.data) + params.head_b.data[0];
        return Ok((logit, Tape::Mlp { inputs, re, z1, a1_mask, a1_d, z2, pooled }));
    }

    let d = arch.model_dim;
    let mut h = Mat::zeros(n + 1, d);
    h.row_mut(0).copy_from_slice(&params.cls_emb.data);
    let proj = if arch.kind.uses_topk() { Some(matmul(&inputs.x, &params.proj)) } else { None };
    for i in 0..n {
        let row = h.row_mut(i + 1);
        if let Some(p) = &proj {
            row[..arch.proj_dim].copy_from_slice(p.row(i));
        }
        row[arch.proj_dim..].copy_from_slice(re.row(i));
    }
    for i in 0..=n {
        axpy(T::one(), params.pos_emb.row(i), h.row_mut(i));
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (out, cache) = layer_forward(l, h, arch.heads, &mut drop);
        caches.push(cache);
        h = out;
    }
    let cls_out = h.row(0).to_vec();
    let logit = dot(&cls_out, &params.head_w.data) + params.head_b.data[0];
    Ok((logit, Tape::Encoder { inputs, layers: caches, cls_out }))
}

/// Accumulates `d_logit · ∂logit/∂θ` into `grads`.
fn backward<T: Scalar>(
    params: &ModelParams<T>,
    wt: &WeightsT<T>,
    tape: &Tape<T>,
    d_logit: T,
    grads: &mut ModelParams<T>,
) {
    let arch = &params.arch;
    grads.head_b.data[0] += d_logit;
    match tape {
        Tape::Mlp { inputs, re, z1, a1_mask, a1_d, z2, pooled } => {
            axpy(d_logit, pooled, &mut grads.head_w.data);
            let n = inputs.len();
            let scale = d_logit / c(n as f64);
            let mut dz2 = Mat::zeros(n, arch.model_dim);
            for i in 0..n {
                axpy(scale, &params.head_w.data, dz2.row_mut(i));
            }
            relu_back(&mut dz2, z2);
            add_at_b(&mut grads.mlp2_w, a1_d, &dz2);
            add_col_sums(&mut grads.mlp2_b, &dz2);
            let mut dz1 = matmul(&dz2, &wt.mlp2);
            apply_mask(&mut dz1, a1_mask);
            relu_back(&mut dz1, z1);
            add_at_b(&mut grads.mlp1_w, re, &dz1);
            add_col_sums(&mut grads.mlp1_b, &dz1);
            let d_re = matmul(&dz1, &wt.mlp1);
            rank_encode_back(inputs, &d_re, params, grads);
        }
        Tape::Encoder { inputs, layers, cls_out } => {
            axpy(d_logit, cls_out, &mut grads.head_w.data);
            let n = inputs.len();
            let mut dh = Mat::zeros(n + 1, arch.model_dim);
            axpy(d_logit, &params.head_w.data, dh.row_mut(0));
            for (li, cache) in layers.iter().enumerate().rev() {
                dh = layer_backward(&params.layers[li], &wt.layers[li], &mut grads.layers[li], cache, &dh, arch.heads);
            }
            for i in 0..=n {
                axpy(T::one(), dh.row(i), grads.pos_emb.row_mut(i));
            }
            axpy(T::one(), dh.row(0), &mut grads.cls_emb.data);
            let body = Mat::from_vec(n, arch.model_dim, dh.data[arch.model_dim..].to_vec());
            if arch.kind.uses_topk() {
                add_at_b(&mut grads.proj, &inputs.x, &slice_cols(&body, 0, arch.proj_dim));
            }
            let d_re = slice_cols(&body, arch.proj_dim, arch.rank_dim);
            rank_encode_back(inputs, &d_re, params, grads);
        }
    }
}

/// Pre-sigmoid logit for one record, dropout off.
pub fn forward<T: Scalar>(params: &ModelParams<T>, record: &LosRecord) -> Result<T> {
    check_arch(params)?;
    let inputs = prepare(record, &params.arch)?;
    Ok(forward_tape(params, inputs, None)?.0)
}

/// `(loss, ∂loss/∂logit)` of binary cross-entropy on a logit.
pub fn bce_with_logit<T: Scalar>(x: T, y: bool) -> (T, T) {
    let yv = if y { T::one() } else { T::zero() };
    let loss = x.max(T::zero()) - x * yv + (-x.abs()).exp().ln_1p();
    (loss, sigmoid(x) - yv)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn label_of(record: &LosRecord, i: usize) -> Result<bool> {
    record.label.ok_or_else(|| Error::domain(format!("record {i} in the batch has no label")))
}

/// Mean BCE over `batch` and its gradient, summed in fixed-size chunks so the
/// result is independent of scheduling. `dropout_seed` enables dropout with
/// a per-record RNG stream.
pub(crate) fn batch_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&LosRecord],
    dropout: f64,
    dropout_seed: Option<u64>,
) -> Result<(T, ModelParams<T>)> {
    check_arch(params)?;
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let inv_b = c::<T>(1.0 / batch.len() as f64);
    let wt = WeightsT::new(params);
    let parts: Vec<Result<(T, ModelParams<T>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grads = params.zeros_like();
            let mut loss = T::zero();
            for (j, rec) in chunk.iter().enumerate() {
                let idx = ci * GRAD_CHUNK + j;
                let y = label_of(rec, idx)?;
                let inputs = prepare(rec, &params.arch)?;
                let mut rng;
                let drop = match dropout_seed {
                    Some(seed) if dropout > 0.0 => {
                        rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(idx as u64);
                        Some(Dropout { p: dropout, rng: &mut rng })
                    }
                    _ => None,
                };
                let (logit, tape) = forward_tape(params, inputs, drop)?;
                let (l, dl) = bce_with_logit(logit, y);
                loss += l;
                backward(params, &wt, &tape, dl * inv_b, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = T::zero();
    let mut grads = params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.accumulate(&g);
    }
    Ok((total * inv_b, grads))
}

/// Mean binary cross-entropy over a labeled batch and its exact gradient
/// (dropout off).
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, batch: &[LosRecord]) -> Result<(T, ModelParams<T>)> {
    let refs: Vec<&LosRecord> = batch.iter().collect();
    batch_loss_grad(params, &refs, 0.0, None)
}

/// `sigmoid(forward)` per record, in input order.
pub fn predict_scores<T: Scalar>(params: &ModelParams<T>, records: &[LosRecord]) -> Result<Vec<f64>> {
    records.par_iter().map(|r| forward(params, r).map(|x| sigmoid(x).to_f64().unwrap())).collect()
}

/// Raw logits per record, in input order.
pub fn predict_logits<T: Scalar>(params: &ModelParams<T>, records: &[LosRecord]) -> Result<Vec<f64>> {
    records.par_iter().map(|r| forward(params, r).map(|x| x.to_f64().unwrap())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::TrainConfig;
    use std::collections::BTreeMap;

    fn record(n: usize, k: usize, seed: u64, label: bool) -> LosRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut topk = Vec::new();
        let mut atp = Vec::new();
        let mut ranks = Vec::new();
        for _ in 0..n {
            let mut row: Vec<f32> = (0..k).map(|_| rng.gen_range(0.0..1.0f32)).collect();
            let s: f32 = row.iter().sum::<f32>() * 1.5;
            row.iter_mut().for_each(|x| *x /= s);
            row.sort_by(|a, b| b.total_cmp(a));
            let r = rng.gen_range(0..k);
            atp.push(row[r]);
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

    fn small(kind: ModelKind) -> Arch {
        let cfg = TrainConfig { model_kind: kind, emb_size: 16, heads: 4, n_max: 12, ..TrainConfig::default() };
        Arch::from_config(&cfg, 6).unwrap()
    }

    #[test]
    fn zero_network_outputs_head_bias() {
        for kind in ModelKind::ALL {
            let mut p = ModelParams::<f64>::zeros(small(kind));
            for l in &mut p.layers {
                l.ln1_g.data.fill(1.0);
                l.ln2_g.data.fill(1.0);
            }
            p.head_b.data[0] = 0.37;
            assert_eq!(forward(&p, &record(5, 6, 1, true)).unwrap(), 0.37);
            let (_, g) = loss_and_grad(&p, &[record(3, 6, 2, true)]).unwrap();
            assert!((g.head_b.data[0] - (sigmoid(0.37) - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_at_zero_logit() {
        let (l, d) = bce_with_logit(0.0f64, true);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(d, -0.5);
        let (l, _) = bce_with_logit(-800.0f64, true);
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn rank_encoding_formula() {
        let mut p = ModelParams::<f64>::zeros(small(ModelKind::LosNet));
        p.rank_w2.data.fill(1.0);
        let re = rank_encode(&[0.2, 0.0], &[3, 1], &p).unwrap();
        assert!(re.row(0).iter().all(|&x| x == 0.2));
        assert!(re.row(1).iter().all(|&x| x == 0.0));

        let p = ModelParams::<f64>::init(small(ModelKind::LosNet), 3);
        let re = rank_encode(&[0.7], &[4], &p).unwrap();
        for j in 0..p.arch.rank_dim {
            let want = 0.7 * 0.2 * p.rank_w1.data[j] + 0.7 * p.rank_w2.data[j];
            assert!((re.data[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_and_topk_containment() {
        for kind in ModelKind::ALL {
            let p = ModelParams::<f64>::init(small(kind), 9);
            let rec = record(5, 6, 4, false);
            let base = forward(&p, &rec).unwrap();
            let padded = crate::signature::pad_to(&rec, 11);
            assert_eq!(forward(&p, &padded).unwrap(), base);
            if kind != ModelKind::LosNet {
                let mut other = rec.clone();
                other.topk.iter_mut().for_each(|x| *x *= 0.5);
                assert_eq!(forward(&p, &other).unwrap(), base);
            }
        }
    }

    #[test]
    fn unlabeled_batch_is_rejected() {
        let p = ModelParams::<f64>::init(small(ModelKind::LosNet), 1);
        let mut r = record(3, 6, 1, true);
        r.label = None;
        assert!(matches!(loss_and_grad(&p, &[r]), Err(Error::Domain(_))));
        assert!(predict_scores(&p, &[]).unwrap().is_empty());
    }
}
