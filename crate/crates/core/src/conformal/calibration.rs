use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quantile::conformal_quantile;
use super::scores::{NeighborhoodScorer, PointScores};
use super::{check_alpha, check_lambda, PredictionSet, ScoreConfig, Smoothing};
use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::kernel::{FeatureMatrix, KernelParams};
use crate::neighbors::{build_index, ProjectedIndex};

/// Where neighbors of calibration points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// The calibration set is its own reference; each point skips itself.
    Reuse,
    /// A separate labeled pool serves as reference for calibration and test.
    Disjoint,
}

impl FromStr for ReferenceMode {
    type Err = DanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(ReferenceMode::Reuse),
            "disjoint" => Ok(ReferenceMode::Disjoint),
            other => Err(DanceError::invalid(format!(
                "unknown reference mode '{other}' (expected reuse or disjoint)"
            ))),
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceMode::Reuse => "reuse",
            ReferenceMode::Disjoint => "disjoint",
        })
    }
}

pub(crate) mod extended_f64 {
    //! `f64` that may be `±∞`, stored in JSON as a number or `"inf"`/`"-inf"`.
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    #[serde(with = "extended_f64")]
    pub q_knn: f64,
    #[serde(with = "extended_f64")]
    pub q_clr: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub alpha_knn: f64,
    pub alpha_clr: f64,
    pub mode: ReferenceMode,
    pub score_config: ScoreConfig,
}

impl CalibrationArtifact {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_lambda(self.lambda)?;
        self.score_config.validate()?;
        if (self.alpha_knn + self.alpha_clr - self.alpha).abs() > 1e-12 {
            return Err(DanceError::invalid("branch error budgets do not sum to alpha"));
        }
        if self.q_knn.is_nan() || self.q_clr.is_nan() {
            return Err(DanceError::NonFinite("NaN threshold".into()));
        }
        Ok(())
    }
}

fn branch_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        conformal_quantile(scores, alpha)
    }
}

/// `(q_knn, q_clr)` from true-label calibration scores; a branch with a zero
/// error budget gets `+∞`.
pub fn thresholds_from_scores(knn: &[f64], clr: &[f64], alpha: f64, lambda: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    if knn.len() != clr.len() {
        return Err(DanceError::DimensionMismatch {
            expected: knn.len(),
            actual: clr.len(),
        });
    }
    if knn.is_empty() {
        return Err(DanceError::invalid("empty calibration set"));
    }
    let q_knn = branch_threshold(knn, (1.0 - lambda) * alpha)?;
    let q_clr = branch_threshold(clr, lambda * alpha)?;
    Ok((q_knn, q_clr))
}

/// Builds the artifact from already computed calibration scores.
pub fn calibrate_scored(
    scores: &[PointScores],
    labels: &[usize],
    alpha: f64,
    lambda: f64,
    mode: ReferenceMode,
    cfg: &ScoreConfig,
) -> Result<CalibrationArtifact> {
    if scores.len() != labels.len() {
        return Err(DanceError::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let knn: Vec<f64> = scores.iter().zip(labels).map(|(s, &y)| s.knn[y]).collect();
    let clr: Vec<f64> = scores.iter().zip(labels).map(|(s, &y)| s.clr[y]).collect();
    let (q_knn, q_clr) = thresholds_from_scores(&knn, &clr, alpha, lambda)?;
    Ok(CalibrationArtifact {
        q_knn,
        q_clr,
        alpha,
        lambda,
        alpha_knn: (1.0 - lambda) * alpha,
        alpha_clr: lambda * alpha,
        mode,
        score_config: cfg.clone(),
    })
}

pub(crate) fn check_mode(cal: &EmbeddedDataset, reference: &ProjectedIndex, mode: ReferenceMode) -> Result<()> {
    match mode {
        ReferenceMode::Reuse if !reference.is_built_from(cal)? => Err(DanceError::invalid(
            "reuse mode requires the reference index to be built from the calibration set",
        )),
        ReferenceMode::Disjoint if reference.overlaps(cal)? => Err(DanceError::invalid(
            "disjoint mode requires a reference set that shares no rows with the calibration set",
        )),
        _ => Ok(()),
    }
}

pub fn calibrate(
    cal: &EmbeddedDataset,
    reference: &ProjectedIndex,
    kernel: &KernelParams,
    alpha: f64,
    lambda: f64,
    mode: ReferenceMode,
    cfg: &ScoreConfig,
) -> Result<CalibrationArtifact> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    check_mode(cal, reference, mode)?;
    let scorer = NeighborhoodScorer::new(reference, kernel, cfg)?;
    let scores = scorer.score_dataset(cal, mode == ReferenceMode::Reuse)?;
    calibrate_scored(&scores, cal.labels(), alpha, lambda, mode, cfg)
}

/// k-NN branch set from precomputed scores.
pub(crate) fn knn_set_from_scores(scores: &PointScores, q: f64, cfg: &ScoreConfig) -> PredictionSet {
    let c = scores.knn.len();
    if q == f64::INFINITY {
        return PredictionSet::full(c);
    }
    let values = match cfg.smoothing {
        Smoothing::Deterministic => {
            if q.floor() > cfg.m_knn as f64 {
                return PredictionSet::full(c);
            }
            &scores.knn_rank
        }
        Smoothing::Smoothed => &scores.knn,
    };
    PredictionSet::from_labels((0..c).filter(|&y| values[y] <= q).collect())
}

pub(crate) fn clr_set_from_scores(scores: &PointScores, q: f64) -> PredictionSet {
    let c = scores.clr.len();
    if q == f64::INFINITY {
        return PredictionSet::full(c);
    }
    PredictionSet::from_labels((0..c).filter(|&y| scores.clr[y] <= q).collect())
}

pub fn set_knn(
    z: &[f64],
    q: f64,
    index: &ProjectedIndex,
    kernel: &KernelParams,
    cfg: &ScoreConfig,
    point_id: u64,
) -> Result<PredictionSet> {
    let scores = NeighborhoodScorer::new(index, kernel, cfg)?.point_scores(z, point_id, None)?;
    Ok(knn_set_from_scores(&scores, q, cfg))
}

pub fn set_clr(
    z: &[f64],
    q: f64,
    index: &ProjectedIndex,
    kernel: &KernelParams,
    cfg: &ScoreConfig,
) -> Result<PredictionSet> {
    let scores = NeighborhoodScorer::new(index, kernel, cfg)?.point_scores(z, 0, None)?;
    Ok(clr_set_from_scores(&scores, q))
}

/// Both branch sets and their intersection for one point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSets {
    pub knn: PredictionSet,
    pub clr: PredictionSet,
    pub dance: PredictionSet,
}

impl BranchSets {
    pub(crate) fn from_scores(scores: &PointScores, art: &CalibrationArtifact) -> Self {
        let knn = knn_set_from_scores(scores, art.q_knn, &art.score_config);
        let clr = clr_set_from_scores(scores, art.q_clr);
        let dance = knn.intersection(&clr);
        Self { knn, clr, dance }
    }
}

pub fn dance_set(
    z: &[f64],
    art: &CalibrationArtifact,
    index: &ProjectedIndex,
    kernel: &KernelParams,
    point_id: u64,
) -> Result<PredictionSet> {
    let scores = NeighborhoodScorer::new(index, kernel, &art.score_config)?.point_scores(z, point_id, None)?;
    Ok(BranchSets::from_scores(&scores, art).dance)
}

/// Owned reference index, kernel and thresholds: everything needed to emit sets.
#[derive(Debug, Clone)]
pub struct DancePredictor {
    index: ProjectedIndex,
    kernel: KernelParams,
    artifact: CalibrationArtifact,
}

impl DancePredictor {
    pub fn new(index: ProjectedIndex, kernel: KernelParams, artifact: CalibrationArtifact) -> Result<Self> {
        artifact.validate()?;
        NeighborhoodScorer::new(&index, &kernel, &artifact.score_config)?;
        Ok(Self {
            index,
            kernel,
            artifact,
        })
    }

    /// Builds the reference index from `reference` and calibrates on `cal`.
    pub fn fit(
        reference: &EmbeddedDataset,
        cal: &EmbeddedDataset,
        kernel: KernelParams,
        alpha: f64,
        lambda: f64,
        mode: ReferenceMode,
        cfg: &ScoreConfig,
    ) -> Result<Self> {
        let index = build_index(reference, &kernel.feature_matrix)?;
        let artifact = calibrate(cal, &index, &kernel, alpha, lambda, mode, cfg)?;
        Ok(Self {
            index,
            kernel,
            artifact,
        })
    }

    pub fn index(&self) -> &ProjectedIndex {
        &self.index
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn feature_matrix(&self) -> &FeatureMatrix {
        &self.kernel.feature_matrix
    }

    pub fn artifact(&self) -> &CalibrationArtifact {
        &self.artifact
    }

    pub fn class_count(&self) -> usize {
        self.index.class_count()
    }

    fn scorer(&self) -> NeighborhoodScorer<'_> {
        NeighborhoodScorer::new(&self.index, &self.kernel, &self.artifact.score_config)
            .expect("validated at construction")
    }

    pub fn branch_sets(&self, z: &[f64], point_id: u64) -> Result<BranchSets> {
        let scores = self.scorer().point_scores(z, point_id, None)?;
        Ok(BranchSets::from_scores(&scores, &self.artifact))
    }

    pub fn predict(&self, z: &[f64], point_id: u64) -> Result<PredictionSet> {
        Ok(self.branch_sets(z, point_id)?.dance)
    }

    /// Branch sets for every row of `data`, noise keyed by the row ids.
    pub fn branch_sets_all(&self, data: &EmbeddedDataset) -> Result<Vec<BranchSets>> {
        let scores = self.scorer().score_dataset(data, false)?;
        Ok(scores
            .par_iter()
            .map(|s| BranchSets::from_scores(s, &self.artifact))
            .collect())
    }
}
