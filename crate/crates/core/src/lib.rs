//! Conformal prediction sets from learned-kernel neighborhoods of embedding
//! vectors.
//!
//! The pipeline: a kernel ridge regressor with a learned Mahalanobis metric
//! ([`rfm`]) adapts the embedding space to the task; reference rows are
//! indexed in that metric ([`neighbors`]); two neighborhood scores are
//! calibrated on held-out data and their label sets intersected
//! ([`conformal`]). [`eval`] runs whole experiments and coverage checks, and
//! [`io`] reads and writes the on-disk formats.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod matrix;
pub mod neighbors;
pub mod rfm;

pub use conformal::{CalibrationArtifact, DancePredictor, PredictionSet, ReferenceMode, ScoreConfig, Smoothing};
pub use dataset::EmbeddedDataset;
pub use error::{DanceError, ErrorKind, Result};
pub use kernel::{FeatureMatrix, KernelParams};
pub use matrix::Matrix;
pub use rfm::{RfmConfig, RfmModel};
