//! Neighborhood nonconformity scores and split-conformal calibration.
//!
//! Two scores are computed from the same kernel-space neighborhood:
//!
//! * the rank score `S_knn(z, y)`: the smallest `k ≤ m_knn` for which `y`
//!   shows up among the labels of the `k` nearest reference rows;
//! * the contrastive score `S_clr(z, y)`: the smallest softmax loss,
//!   relative to the nearest-neighbor anchor, among the `m_clr` support
//!   neighbors labeled `y`.
//!
//! Each gets its own threshold from a share of the error budget `α`
//! (`(1-λ)α` and `λα`), and the final set is the intersection of the two
//! label sets. Labels that cannot be reached in a neighborhood score `+∞`.

mod calibration;
mod lambda;
mod noise;
mod quantile;
mod scores;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DanceError, Result};

pub use calibration::{
    calibrate, calibrate_scored, dance_set, set_clr, set_knn, thresholds_from_scores, BranchSets, CalibrationArtifact,
    DancePredictor, ReferenceMode,
};
pub(crate) use calibration::{clr_set_from_scores, knn_set_from_scores};
pub use lambda::{select_lambda, select_lambda_from_metrics, LambdaReference, LambdaWeights, DEFAULT_LAMBDA_GRID};
pub use noise::smoothing_noise;
pub use quantile::{conformal_quantile, conformal_rank, ncp_weighted_quantile};
pub use scores::{
    score_aps, score_clr, score_deep_knn, score_knn, score_raps, softmax, NeighborhoodScorer, PointScores,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    Deterministic,
    Smoothed,
}

impl FromStr for Smoothing {
    type Err = DanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" | "off" | "none" => Ok(Smoothing::Deterministic),
            "smoothed" | "on" => Ok(Smoothing::Smoothed),
            other => Err(DanceError::invalid(format!("unknown smoothing mode '{other}'"))),
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothing::Deterministic => "deterministic",
            Smoothing::Smoothed => "smoothed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub m_knn: usize,
    pub m_clr: usize,
    /// Softmax temperature τ of the contrastive loss.
    pub temperature: f64,
    /// Upper end ε of the uniform tie-breaking noise; must stay below 1.
    pub noise_epsilon: f64,
    pub smoothing: Smoothing,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            m_knn: 100,
            m_clr: 50,
            temperature: 0.01,
            noise_epsilon: 0.1,
            smoothing: Smoothing::Smoothed,
            seed: 0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_knn == 0 || self.m_clr == 0 {
            return Err(DanceError::invalid("m_knn and m_clr must be at least 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(DanceError::invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.noise_epsilon > 0.0 && self.noise_epsilon < 1.0) {
            return Err(DanceError::invalid(format!(
                "noise epsilon must lie in (0, 1), got {}",
                self.noise_epsilon
            )));
        }
        Ok(())
    }

    /// Neighborhood size needed to evaluate both scores.
    pub fn neighborhood(&self) -> usize {
        self.m_knn.max(self.m_clr)
    }
}

/// Sorted, duplicate-free subset of `{0, …, c-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet(Vec<usize>);

impl PredictionSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn full(class_count: usize) -> Self {
        Self((0..class_count).collect())
    }

    pub fn from_labels(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn intersection(&self, other: &PredictionSet) -> PredictionSet {
        Self(self.0.iter().copied().filter(|&l| other.contains(l)).collect())
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.0.iter().all(|&l| other.contains(l))
    }
}

/// `α = 0` is accepted as the degenerate "always cover" level.
pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(DanceError::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DanceError::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}
