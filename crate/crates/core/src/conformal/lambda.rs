use serde::{Deserialize, Serialize};

use super::calibration::{calibrate_scored, clr_set_from_scores, knn_set_from_scores, ReferenceMode};
use super::scores::NeighborhoodScorer;
use super::{check_alpha, check_lambda, PredictionSet, ScoreConfig};
use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::eval::{ccv, mean_set_size, split_indices};
use crate::kernel::KernelParams;
use crate::neighbors::{build_index, ProjectedIndex};

pub const DEFAULT_LAMBDA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Weights of the standardized set size and class-conditional violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    pub size: f64,
    pub ccv: f64,
}

impl Default for LambdaWeights {
    fn default() -> Self {
        Self { size: 0.8, ccv: 0.2 }
    }
}

/// Reference used while scoring the inner split.
#[derive(Debug, Clone, Copy)]
pub enum LambdaReference<'a> {
    /// The inner 80% is its own reference (leave-one-out).
    Reuse,
    /// A fixed external reference for both inner parts.
    Disjoint(&'a ProjectedIndex),
}

fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(DanceError::invalid("lambda grid is empty"));
    }
    grid.iter().try_for_each(|&l| check_lambda(l))
}

/// Grid member minimizing `w_size·size_z + w_ccv·ccv_z`; ties go to the
/// smallest λ.
pub fn select_lambda_from_metrics(grid: &[f64], sizes: &[f64], ccvs: &[f64], weights: LambdaWeights) -> Result<f64> {
    check_grid(grid)?;
    if sizes.len() != grid.len() || ccvs.len() != grid.len() {
        return Err(DanceError::DimensionMismatch {
            expected: grid.len(),
            actual: sizes.len().min(ccvs.len()),
        });
    }
    let size_z = standardize(sizes);
    let ccv_z = standardize(ccvs);
    let mut best: Option<(f64, f64)> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        let objective = weights.size * size_z[i] + weights.ccv * ccv_z[i];
        best = match best {
            Some((obj, l)) if obj < objective || (obj == objective && l <= lambda) => Some((obj, l)),
            _ => Some((objective, lambda)),
        };
    }
    Ok(best.expect("grid checked non-empty").1)
}

/// Chooses λ on an inner 80/20 split of `cal`: calibrate on the 80% part,
/// measure set size and class-conditional violation on the 20% part.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    cal: &EmbeddedDataset,
    reference: LambdaReference<'_>,
    kernel: &KernelParams,
    alpha: f64,
    grid: &[f64],
    cfg: &ScoreConfig,
    weights: LambdaWeights,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_grid(grid)?;
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let parts = split_indices(cal.len(), &[0.8, 0.2], seed)?;
    let inner_ref = cal.subset(&parts[0])?;
    let inner_val = cal.subset(&parts[1])?;

    let own_index;
    let (index, leave_one_out, mode) = match reference {
        LambdaReference::Reuse => {
            own_index = build_index(&inner_ref, &kernel.feature_matrix)?;
            (&own_index, true, ReferenceMode::Reuse)
        }
        LambdaReference::Disjoint(index) => (index, false, ReferenceMode::Disjoint),
    };
    let scorer = NeighborhoodScorer::new(index, kernel, cfg)?;
    let ref_scores = scorer.score_dataset(&inner_ref, leave_one_out)?;
    let val_scores = scorer.score_dataset(&inner_val, false)?;

    let mut sizes = Vec::with_capacity(grid.len());
    let mut ccvs = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let art = calibrate_scored(&ref_scores, inner_ref.labels(), alpha, lambda, mode, cfg)?;
        let sets: Vec<PredictionSet> = val_scores
            .iter()
            .map(|s| knn_set_from_scores(s, art.q_knn, cfg).intersection(&clr_set_from_scores(s, art.q_clr)))
            .collect();
        sizes.push(mean_set_size(&sets)?);
        ccvs.push(ccv(&sets, inner_val.labels(), alpha, cal.class_count())?);
    }
    select_lambda_from_metrics(grid, &sizes, &ccvs, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_two_candidate_example() {
        // sizes (2,4) → z (−1,1); ccvs (8,6) → z (1,−1); objectives (−0.6, 0.6)
        let l = select_lambda_from_metrics(&[0.0, 1.0], &[2.0, 4.0], &[8.0, 6.0], LambdaWeights::default()).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(standardize(&[2.0, 4.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn identical_metrics_pick_smallest() {
        let grid = [0.7, 0.3, 0.5];
        let l = select_lambda_from_metrics(&grid, &[1.0; 3], &[2.0; 3], LambdaWeights::default()).unwrap();
        assert_eq!(l, 0.3);
    }

    #[test]
    fn singleton_and_invalid_grids() {
        let l = select_lambda_from_metrics(&[0.4], &[9.0], &[1.0], LambdaWeights::default()).unwrap();
        assert_eq!(l, 0.4);
        assert!(select_lambda_from_metrics(&[], &[], &[], LambdaWeights::default()).is_err());
        assert!(select_lambda_from_metrics(&[1.5], &[1.0], &[1.0], LambdaWeights::default()).is_err());
    }

    #[test]
    fn ccv_weight_can_flip_the_choice() {
        let w = LambdaWeights { size: 0.2, ccv: 0.8 };
        let l = select_lambda_from_metrics(&[0.0, 1.0], &[2.0, 4.0], &[8.0, 6.0], w).unwrap();
        assert_eq!(l, 1.0);
    }
}
