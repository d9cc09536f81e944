//! Learned detectors over signatures.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Arch, ModelKind, RankMode, TrainConfig};
pub use network::{forward, loss_and_grad, predict_scores};
pub use params::ModelParams;
pub use train::{finetune, train, TrainHistory};
