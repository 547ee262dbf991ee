use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conformal::{PredictionSet, ReferenceMode};
use crate::error::{DanceError, Result};

fn check_pairs(sets: &[PredictionSet], labels: &[usize]) -> Result<()> {
    if sets.len() != labels.len() {
        return Err(DanceError::DimensionMismatch {
            expected: labels.len(),
            actual: sets.len(),
        });
    }
    if sets.is_empty() {
        return Err(DanceError::invalid("no prediction sets to evaluate"));
    }
    Ok(())
}

/// Fraction of points whose label lies in their set.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    check_pairs(sets, labels)?;
    let hits = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

pub fn mean_set_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(DanceError::invalid("no prediction sets to evaluate"));
    }
    Ok(sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64)
}

/// Coverage within each class that occurs in `labels`.
pub fn per_class_coverage(
    sets: &[PredictionSet],
    labels: &[usize],
    class_count: usize,
) -> Result<BTreeMap<usize, f64>> {
    check_pairs(sets, labels)?;
    let mut hits = vec![0usize; class_count];
    let mut totals = vec![0usize; class_count];
    for (s, &y) in sets.iter().zip(labels) {
        if y >= class_count {
            return Err(DanceError::LabelOutOfRange { label: y, class_count });
        }
        totals[y] += 1;
        if s.contains(y) {
            hits[y] += 1;
        }
    }
    Ok((0..class_count)
        .filter(|&y| totals[y] > 0)
        .map(|y| (y, hits[y] as f64 / totals[y] as f64))
        .collect())
}

/// `100 · mean_y |Cov_y − (1−α)|` over classes present in `labels`.
pub fn ccv(sets: &[PredictionSet], labels: &[usize], alpha: f64, class_count: usize) -> Result<f64> {
    let per_class = per_class_coverage(sets, labels, class_count)?;
    if per_class.is_empty() {
        return Err(DanceError::invalid("no class has any evaluated instance"));
    }
    let target = 1.0 - alpha;
    let total: f64 = per_class.values().map(|c| (c - target).abs()).sum();
    Ok(100.0 * total / per_class.len() as f64)
}

/// Evaluation summary of one method on one test split. Field order is the
/// serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub alpha: f64,
    /// Error-budget split used by the neighborhood methods; `None` otherwise.
    pub lambda: Option<f64>,
    pub coverage: f64,
    pub mean_set_size: f64,
    pub ccv: f64,
    pub accuracy: f64,
    pub per_class_coverage: BTreeMap<usize, f64>,
    pub seed: u64,
    pub mode: ReferenceMode,
}

impl MetricsReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_sets(
        method: impl Into<String>,
        sets: &[PredictionSet],
        labels: &[usize],
        class_count: usize,
        alpha: f64,
        lambda: Option<f64>,
        accuracy: f64,
        seed: u64,
        mode: ReferenceMode,
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            alpha,
            lambda,
            coverage: coverage(sets, labels)?,
            mean_set_size: mean_set_size(sets)?,
            ccv: ccv(sets, labels, alpha, class_count)?,
            accuracy,
            per_class_coverage: per_class_coverage(sets, labels, class_count)?,
            seed,
            mode,
        })
    }
}
