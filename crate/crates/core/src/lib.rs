//! Scoring LLM output signatures (top-K sorted token distributions plus the
//! probability of each realized token) for hallucination and
//! data-contamination detection.
//!
//! * [`signature`]: building and validating signatures.
//! * [`gsf`]: gated scoring functions and the classic baselines.
//! * [`model`]: the learned detectors, training and checkpoints.
//! * [`eval`]: AUC, splits and reports.
//! * [`io`]: the record file format and the synthetic generator.

pub mod cli;
pub mod error;
pub mod eval;
pub mod gsf;
pub mod io;
pub mod model;
pub mod signature;

pub use error::{Error, FormatError, Result};
pub use gsf::{gsf_apply, GsfConfig, GsfSpec, Method, Scale};
pub use signature::{LosRecord, RawTds};
