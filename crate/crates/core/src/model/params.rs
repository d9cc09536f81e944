use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{Arch, RankMode};
use super::tensor::{c, Mat, Scalar};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub wq: Mat<T>,
    pub bq: Mat<T>,
    pub wk: Mat<T>,
    pub bk: Mat<T>,
    pub wv: Mat<T>,
    pub bv: Mat<T>,
    pub wo: Mat<T>,
    pub bo: Mat<T>,
    pub ln1_g: Mat<T>,
    pub ln1_b: Mat<T>,
    pub ff1_w: Mat<T>,
    pub ff1_b: Mat<T>,
    pub ff2_w: Mat<T>,
    pub ff2_b: Mat<T>,
    pub ln2_g: Mat<T>,
    pub ln2_b: Mat<T>,
}

/// Every learnable tensor of a detector. Tensors a kind does not use are
/// empty and skipped by [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Arch,
    /// `k × proj_dim`, no bias.
    pub proj: Mat<T>,
    pub rank_w1: Mat<T>,
    pub rank_w2: Mat<T>,
    /// `(rank_cap + 1) × rank_dim`.
    pub rank_table: Mat<T>,
    /// `(n_max + 1) × model_dim`; row 0 belongs to the CLS slot.
    pub pos_emb: Mat<T>,
    pub cls_emb: Mat<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub mlp1_w: Mat<T>,
    pub mlp1_b: Mat<T>,
    pub mlp2_w: Mat<T>,
    pub mlp2_b: Mat<T>,
    pub head_w: Mat<T>,
    pub head_b: Mat<T>,
}

fn trunc_normal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<T> {
    let data = (0..rows * cols)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break c(z * INIT_STD);
            }
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn ones<T: Scalar>(cols: usize) -> Mat<T> {
    Mat::from_vec(1, cols, vec![T::one(); cols])
}

type Named<'a, T> = Vec<(String, &'a Mat<T>)>;
type NamedMut<'a, T> = Vec<(String, &'a mut Mat<T>)>;

impl<T: Scalar> EncoderLayer<T> {
    fn named(&self, i: usize) -> Named<'_, T> {
        let Self { wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b } = self;
        vec![
            (format!("layers.{i}.wq"), wq),
            (format!("layers.{i}.bq"), bq),
            (format!("layers.{i}.wk"), wk),
            (format!("layers.{i}.bk"), bk),
            (format!("layers.{i}.wv"), wv),
            (format!("layers.{i}.bv"), bv),
            (format!("layers.{i}.wo"), wo),
            (format!("layers.{i}.bo"), bo),
            (format!("layers.{i}.ln1_g"), ln1_g),
            (format!("layers.{i}.ln1_b"), ln1_b),
            (format!("layers.{i}.ff1_w"), ff1_w),
            (format!("layers.{i}.ff1_b"), ff1_b),
            (format!("layers.{i}.ff2_w"), ff2_w),
            (format!("layers.{i}.ff2_b"), ff2_b),
            (format!("layers.{i}.ln2_g"), ln2_g),
            (format!("layers.{i}.ln2_b"), ln2_b),
        ]
    }

    fn named_mut(&mut self, i: usize) -> NamedMut<'_, T> {
        let Self { wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b } = self;
        vec![
            (format!("layers.{i}.wq"), wq),
            (format!("layers.{i}.bq"), bq),
            (format!("layers.{i}.wk"), wk),
            (format!("layers.{i}.bk"), bk),
            (format!("layers.{i}.wv"), wv),
            (format!("layers.{i}.bv"), bv),
            (format!("layers.{i}.wo"), wo),
            (format!("layers.{i}.bo"), bo),
            (format!("layers.{i}.ln1_g"), ln1_g),
            (format!("layers.{i}.ln1_b"), ln1_b),
            (format!("layers.{i}.ff1_w"), ff1_w),
            (format!("layers.{i}.ff1_b"), ff1_b),
            (format!("layers.{i}.ff2_w"), ff2_w),
            (format!("layers.{i}.ff2_b"), ff2_b),
            (format!("layers.{i}.ln2_g"), ln2_g),
            (format!("layers.{i}.ln2_b"), ln2_b),
        ]
    }
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters with the shapes `arch` requires.
    pub fn zeros(arch: Arch) -> Self {
        let d = arch.model_dim;
        let transformer = arch.kind.is_transformer();
        let (w1, w2, table) = match arch.rank_mode {
            RankMode::Scaled => (Mat::zeros(1, arch.rank_dim), Mat::zeros(1, arch.rank_dim), Mat::default()),
            RankMode::Lookup => (Mat::default(), Mat::default(), Mat::zeros(arch.rank_cap + 1, arch.rank_dim)),
        };
        let layers = if transformer {
            (0..arch.layers)
                .map(|_| EncoderLayer {
                    wq: Mat::zeros(d, d),
                    bq: Mat::zeros(1, d),
                    wk: Mat::zeros(d, d),
                    bk: Mat::zeros(1, d),
                    wv: Mat::zeros(d, d),
                    bv: Mat::zeros(1, d),
                    wo: Mat::zeros(d, d),
                    bo: Mat::zeros(1, d),
                    ln1_g: Mat::zeros(1, d),
                    ln1_b: Mat::zeros(1, d),
                    ff1_w: Mat::zeros(d, arch.ff_dim),
                    ff1_b: Mat::zeros(1, arch.ff_dim),
                    ff2_w: Mat::zeros(arch.ff_dim, d),
                    ff2_b: Mat::zeros(1, d),
                    ln2_g: Mat::zeros(1, d),
                    ln2_b: Mat::zeros(1, d),
                })
                .collect()
        } else {
            Vec::new()
        };
        let (pos, cls) = if transformer {
            (Mat::zeros(arch.n_max + 1, d), Mat::zeros(1, d))
        } else {
            (Mat::default(), Mat::default())
        };
        let mlp = |r, c| if transformer { Mat::default() } else { Mat::zeros(r, c) };
        Self {
            arch,
            proj: if arch.kind.uses_topk() { Mat::zeros(arch.k, arch.proj_dim) } else { Mat::default() },
            rank_w1: w1,
            rank_w2: w2,
            rank_table: table,
            pos_emb: pos,
            cls_emb: cls,
            layers,
            mlp1_w: mlp(d, d),
            mlp1_b: mlp(1, d),
            mlp2_w: mlp(d, d),
            mlp2_b: mlp(1, d),
            head_w: Mat::zeros(d, 1),
            head_b: Mat::zeros(1, 1),
        }
    }

    /// Truncated-normal weights (std 0.02, cut at two std), zero biases and
    /// unit layer-norm gains.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x1417);
        let mut p = Self::zeros(arch);
        for (name, m) in p.named_mut() {
            if m.is_empty() {
                continue;
            }
            let leaf = name.rsplit('.').next().unwrap();
            *m = if leaf.ends_with("_g") {
                ones(m.cols)
            } else if leaf.starts_with('b') || leaf.ends_with("_b") {
                Mat::zeros(m.rows, m.cols)
            } else {
                trunc_normal(&mut rng, m.rows, m.cols)
            };
        }
        p
    }

    /// Every tensor with its name, in a fixed order (empty ones included).
    pub fn named(&self) -> Named<'_, T> {
        let Self {
            arch: _,
            proj,
            rank_w1,
            rank_w2,
            rank_table,
            pos_emb,
            cls_emb,
            layers,
            mlp1_w,
            mlp1_b,
            mlp2_w,
            mlp2_b,
            head_w,
            head_b,
        } = self;
        let mut out: Named<'_, T> = vec![
            ("proj".to_string(), proj),
            ("rank_w1".to_string(), rank_w1),
            ("rank_w2".to_string(), rank_w2),
            ("rank_table".to_string(), rank_table),
            ("pos_emb".to_string(), pos_emb),
            ("cls_emb".to_string(), cls_emb),
        ];
        for (i, l) in layers.iter().enumerate() {
            out.extend(l.named(i));
        }
        out.extend([
            ("mlp1_w".to_string(), mlp1_w),
            ("mlp1_b".to_string(), mlp1_b),
            ("mlp2_w".to_string(), mlp2_w),
            ("mlp2_b".to_string(), mlp2_b),
            ("head_w".to_string(), head_w),
            ("head_b".to_string(), head_b),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> NamedMut<'_, T> {
        let Self {
            arch: _,
            proj,
            rank_w1,
            rank_w2,
            rank_table,
            pos_emb,
            cls_emb,
            layers,
            mlp1_w,
            mlp1_b,
            mlp2_w,
            mlp2_b,
            head_w,
            head_b,
        } = self;
        let mut out: NamedMut<'_, T> = vec![
            ("proj".to_string(), proj),
            ("rank_w1".to_string(), rank_w1),
            ("rank_w2".to_string(), rank_w2),
            ("rank_table".to_string(), rank_table),
            ("pos_emb".to_string(), pos_emb),
            ("cls_emb".to_string(), cls_emb),
        ];
        for (i, l) in layers.iter_mut().enumerate() {
            out.extend(l.named_mut(i));
        }
        out.extend([
            ("mlp1_w".to_string(), mlp1_w),
            ("mlp1_b".to_string(), mlp1_b),
            ("mlp2_w".to_string(), mlp2_w),
            ("mlp2_b".to_string(), mlp2_b),
            ("head_w".to_string(), head_w),
            ("head_b".to_string(), head_b),
        ]);
        out
    }

    /// Named non-empty tensors in a fixed order.
    pub fn tensors(&self) -> Named<'_, T> {
        self.named().into_iter().filter(|(_, m)| !m.is_empty()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(self.arch);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.data.iter().all(|x| x.is_finite()))
    }
}
