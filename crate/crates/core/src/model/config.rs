use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which learned detector to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Projected top-K rows concatenated with the rank encoding, transformer
    /// encoder, CLS pooling.
    LosNet,
    /// Rank encoding only, transformer encoder, CLS pooling.
    AtpRTransformer,
    /// Rank encoding only, position-wise MLP, mean pooling.
    AtpRMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LosNet, ModelKind::AtpRTransformer, ModelKind::AtpRMlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LosNet => "losnet",
            ModelKind::AtpRTransformer => "atp_r_transformer",
            ModelKind::AtpRMlp => "atp_r_mlp",
        }
    }

    pub fn uses_topk(self) -> bool {
        self == ModelKind::LosNet
    }

    pub fn is_transformer(self) -> bool {
        self != ModelKind::AtpRMlp
    }
}

/// How ranks enter the rank encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMode {
    /// `p·(1/(1+r))·w1 + p·w2`.
    Scaled,
    /// `p·E[min(r, R)]` with a learned table `E`.
    Lookup,
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::Scaled => "scaled",
            RankMode::Lookup => "lookup",
        }
    }
}

macro_rules! named_enum_io {
    ($ty:ty, [$($v:expr),+]) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                [$($v),+]
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::Config(format!("unknown {} {s:?}", stringify!($ty))))
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum_io!(ModelKind, [ModelKind::LosNet, ModelKind::AtpRTransformer, ModelKind::AtpRMlp]);
named_enum_io!(RankMode, [RankMode::Scaled, RankMode::Lookup]);

/// Optimization schedule and architecture hyperparameters.
///
/// Defaults follow the smallest point of the published search grid
/// (1 layer, width 64, lr 1e-4, no dropout or weight decay) with batch 64,
/// 8 heads, 10% warmup and patience 30.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_layers: usize,
    pub learning_rate: f64,
    pub emb_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub heads: usize,
    pub warmup_frac: f64,
    pub patience: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub rank_mode: RankMode,
    /// Top-K width fed to the projection; 0 takes it from the training data.
    pub topk: usize,
    pub n_max: usize,
    /// Rank-encoding width; 0 means `emb_size / 4` (all of `emb_size` for the
    /// ATP-only kinds).
    pub rank_dim: usize,
    pub ff_mult: usize,
    /// Ranks at or above this share the last lookup row.
    pub rank_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_layers: 1,
            learning_rate: 1e-4,
            emb_size: 64,
            epochs: 300,
            dropout: 0.0,
            weight_decay: 0.0,
            batch_size: 64,
            heads: 8,
            warmup_frac: 0.10,
            patience: 30,
            seed: 0,
            model_kind: ModelKind::LosNet,
            rank_mode: RankMode::Scaled,
            topk: 0,
            n_max: 256,
            rank_dim: 0,
            ff_mult: 4,
            rank_cap: 64,
        }
    }
}

/// One point of the published hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub num_layers: usize,
    pub emb_size: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl TrainConfig {
    /// Values searched over for every dataset (union across datasets).
    pub const GRID_LAYERS: [usize; 2] = [1, 2];
    pub const GRID_EMB: [usize; 3] = [64, 128, 256];
    pub const GRID_DROPOUT: [f64; 3] = [0.0, 0.3, 0.5];
    pub const GRID_WEIGHT_DECAY: [f64; 3] = [0.0, 0.001, 0.005];

    pub fn grid() -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &num_layers in &Self::GRID_LAYERS {
            for &emb_size in &Self::GRID_EMB {
                for &dropout in &Self::GRID_DROPOUT {
                    for &weight_decay in &Self::GRID_WEIGHT_DECAY {
                        out.push(GridPoint { num_layers, emb_size, dropout, weight_decay });
                    }
                }
            }
        }
        out
    }

    pub fn with_grid_point(&self, g: GridPoint) -> Self {
        Self {
            num_layers: g.num_layers,
            emb_size: g.emb_size,
            dropout: g.dropout,
            weight_decay: g.weight_decay,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("emb_size", self.emb_size),
            ("batch_size", self.batch_size),
            ("heads", self.heads),
            ("n_max", self.n_max),
            ("ff_mult", self.ff_mult),
            ("rank_cap", self.rank_cap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("weight_decay must be >= 0 and warmup_frac in [0,1]".into()));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_text(&self) -> String {
        format!(
            "num_layers={}\nlearning_rate={}\nemb_size={}\nepochs={}\ndropout={}\nweight_decay={}\n\
             batch_size={}\nheads={}\nwarmup_frac={}\npatience={}\nseed={}\nmodel_kind={}\n\
             rank_mode={}\ntopk={}\nn_max={}\nrank_dim={}\nff_mult={}\nrank_cap={}\n",
            self.num_layers,
            self.learning_rate,
            self.emb_size,
            self.epochs,
            self.dropout,
            self.weight_decay,
            self.batch_size,
            self.heads,
            self.warmup_frac,
            self.patience,
            self.seed,
            self.model_kind,
            self.rank_mode,
            self.topk,
            self.n_max,
            self.rank_dim,
            self.ff_mult,
            self.rank_cap,
        )
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "num_layers" => self.num_layers = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "emb_size" => self.emb_size = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "warmup_frac" => self.warmup_frac = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "model_kind" => self.model_kind = value.parse()?,
            "rank_mode" => self.rank_mode = value.parse()?,
            "topk" => self.topk = p(key, value)?,
            "n_max" => self.n_max = p(key, value)?,
            "rank_dim" => self.rank_dim = p(key, value)?,
            "ff_mult" => self.ff_mult = p(key, value)?,
            "rank_cap" => self.rank_cap = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// Upper bound on learnable parameters at any supported configuration.
pub const MAX_PARAMS: usize = 2_000_000;

/// Resolved tensor dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub kind: ModelKind,
    pub rank_mode: RankMode,
    /// Top-K width of the input rows (0 for ATP-only kinds).
    pub k: usize,
    /// Width of the projected top-K features.
    pub proj_dim: usize,
    /// Width of the rank encoding.
    pub rank_dim: usize,
    /// Transformer width: `proj_dim + rank_dim`.
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub n_max: usize,
    pub rank_cap: usize,
}

impl Arch {
    pub fn from_config(cfg: &TrainConfig, k: usize) -> Result<Self> {
        cfg.validate()?;
        let (k, proj_dim, rank_dim) = if cfg.model_kind.uses_topk() {
            let d = if cfg.rank_dim == 0 { (cfg.emb_size / 4).max(1) } else { cfg.rank_dim };
            if d >= cfg.emb_size {
                return Err(Error::Config(format!(
                    "rank_dim {d} leaves no room for the projection in emb_size {}",
                    cfg.emb_size
                )));
            }
            if k == 0 {
                return Err(Error::Config("top-K width must be positive".into()));
            }
            (k, cfg.emb_size - d, d)
        } else {
            (0, 0, cfg.emb_size)
        };
        let arch = Self {
            kind: cfg.model_kind,
            rank_mode: cfg.rank_mode,
            k,
            proj_dim,
            rank_dim,
            model_dim: proj_dim + rank_dim,
            heads: cfg.heads,
            layers: cfg.num_layers,
            ff_dim: cfg.ff_mult * cfg.emb_size,
            n_max: cfg.n_max,
            rank_cap: cfg.rank_cap,
        };
        if arch.kind.is_transformer() && arch.model_dim % arch.heads != 0 {
            return Err(Error::Config(format!("{} heads do not divide model width {}", arch.heads, arch.model_dim)));
        }
        let count = arch.param_count();
        if count > MAX_PARAMS {
            return Err(Error::Config(format!("{count} parameters exceed the budget of {MAX_PARAMS}")));
        }
        Ok(arch)
    }

    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let rank = match self.rank_mode {
            RankMode::Scaled => 2 * self.rank_dim,
            RankMode::Lookup => (self.rank_cap + 1) * self.rank_dim,
        };
        let body = if self.kind.is_transformer() {
            let layer = 4 * d * d + 4 * d + 2 * d * self.ff_dim + self.ff_dim + d + 4 * d;
            (self.n_max + 1) * d + d + self.layers * layer
        } else {
            2 * d * d + 2 * d
        };
        self.k * self.proj_dim + rank + body + d + 1
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "arch.kind={}\narch.rank_mode={}\narch.k={}\narch.proj_dim={}\narch.rank_dim={}\n\
             arch.model_dim={}\narch.heads={}\narch.layers={}\narch.ff_dim={}\narch.n_max={}\narch.rank_cap={}\n",
            self.kind,
            self.rank_mode,
            self.k,
            self.proj_dim,
            self.rank_dim,
            self.model_dim,
            self.heads,
            self.layers,
            self.ff_dim,
            self.n_max,
            self.rank_cap
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = TrainConfig {
            num_layers: 2,
            dropout: 0.3,
            model_kind: ModelKind::AtpRMlp,
            rank_mode: RankMode::Lookup,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
        assert!(TrainConfig::from_kv_text("bogus=1").is_err());
        assert!(TrainConfig::from_kv_text("emb_size=abc").is_err());
        let parsed = TrainConfig::from_kv_text("# comment\n\nepochs = 7\n").unwrap();
        assert_eq!(parsed.epochs, 7);
    }

    #[test]
    fn largest_grid_point_fits_budget() {
        let cfg = TrainConfig { num_layers: 2, emb_size: 256, ..TrainConfig::default() };
        let arch = Arch::from_config(&cfg, 1000).unwrap();
        assert!(arch.param_count() <= MAX_PARAMS);
        assert_eq!(TrainConfig::grid().len(), 54);
    }

    #[test]
    fn width_split() {
        let arch = Arch::from_config(&TrainConfig::default(), 10).unwrap();
        assert_eq!((arch.proj_dim, arch.rank_dim, arch.model_dim), (48, 16, 64));
        let cfg = TrainConfig { model_kind: ModelKind::AtpRTransformer, ..TrainConfig::default() };
        let arch = Arch::from_config(&cfg, 10).unwrap();
        assert_eq!((arch.k, arch.proj_dim, arch.rank_dim), (0, 0, 64));
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = TrainConfig { emb_size: 60, ..TrainConfig::default() };
        assert!(Arch::from_config(&cfg, 10).is_err());
    }
}
