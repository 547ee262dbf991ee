use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{fit_adapter, ExperimentConfig, Method, Pipeline};
use super::metrics::{coverage, mean_set_size};
use super::split::{shuffled_indices, split_indices};
use super::{derive_seed, SeedTag};
use crate::conformal::ScoreConfig;
use crate::error::{DanceError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub trials: usize,
    /// Calibration rows per trial; the rest of the calibration+test pool is
    /// the trial's test set. Defaults to the size of the calibration split.
    pub calibration_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCoverage {
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std: f64,
    pub mean_set_size: f64,
    pub trials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub lambda: f64,
    pub calibration_size: usize,
    pub test_size: usize,
    pub methods: Vec<MethodCoverage>,
}

impl MonteCarloSummary {
    pub fn method(&self, m: Method) -> Option<&MethodCoverage> {
        self.methods.iter().find(|c| c.method == m)
    }
}

pub fn monte_carlo_coverage(config: &ExperimentConfig, trials: usize) -> Result<MonteCarloSummary> {
    monte_carlo_coverage_with(
        config,
        &MonteCarloOptions {
            trials,
            calibration_size: None,
        },
    )
}

/// Fits the adapter once, then re-partitions the calibration+test pool for
/// each trial with a fresh seed (which also reseeds the smoothing noise).
pub fn monte_carlo_coverage_with(config: &ExperimentConfig, opts: &MonteCarloOptions) -> Result<MonteCarloSummary> {
    config.validate()?;
    if opts.trials == 0 {
        return Err(DanceError::invalid("need at least one trial"));
    }
    let data = config.source.load()?;
    if data.len() < 3 {
        return Err(DanceError::invalid("need at least 3 rows to split"));
    }
    let parts = split_indices(data.len(), &config.split.ratios, config.split.seed)?;
    let support = data.subset(&parts[0])?;
    let pool_idx: Vec<usize> = parts[1].iter().chain(&parts[2]).copied().collect();
    let pool = data.subset(&pool_idx)?;
    let n_cal = opts.calibration_size.unwrap_or(parts[1].len());
    if n_cal == 0 || n_cal >= pool.len() {
        return Err(DanceError::invalid(format!(
            "calibration size must lie in [1, {}], got {n_cal}",
            pool.len() - 1
        )));
    }

    let adapter = fit_adapter(support, &config.rfm, config.seed)?;
    let pipeline = Pipeline::new(config, &adapter)?;
    let lambda = {
        let cal = pool.subset(&(0..n_cal).collect::<Vec<_>>())?;
        let index = pipeline.reference_index(&cal)?;
        pipeline.resolve_lambda(&cal, &index, &config.score)?
    };

    let per_trial: Vec<Vec<(Method, f64, f64)>> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(config.seed, SeedTag::Trial(t as u64));
            let perm = shuffled_indices(pool.len(), seed);
            let cal = pool.subset(&perm[..n_cal])?;
            let test = pool.subset(&perm[n_cal..])?;
            let cfg = ScoreConfig {
                seed,
                ..config.score.clone()
            };
            let outcome = pipeline.evaluate(&cal, &test, Some(lambda), &cfg)?;
            outcome
                .sets
                .iter()
                .map(|(m, sets)| Ok((*m, coverage(sets, test.labels())?, mean_set_size(sets)?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let methods = per_trial[0]
        .iter()
        .enumerate()
        .map(|(k, &(method, _, _))| {
            let covs: Vec<f64> = per_trial.iter().map(|t| t[k].1).collect();
            let n = covs.len() as f64;
            let mean = covs.iter().sum::<f64>() / n;
            let std = if covs.len() > 1 {
                (covs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let size = per_trial.iter().map(|t| t[k].2).sum::<f64>() / n;
            MethodCoverage {
                method,
                mean,
                std,
                mean_set_size: size,
                trials: covs,
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        lambda,
        calibration_size: n_cal,
        test_size: pool.len() - n_cal,
        methods,
    })
}
