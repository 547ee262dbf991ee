use rayon::prelude::*;

use super::noise::smoothing_noise;
use super::{ScoreConfig, Smoothing};
use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::kernel::{KernelParams, KernelShape};
use crate::neighbors::{NeighborList, ProjectedIndex};

/// Every per-label score of one point, derived from a single neighbor query.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScores {
    /// Labels of the nearest reference rows, closest first.
    pub neighbor_labels: Vec<usize>,
    /// Raw rank score per label (`+∞` when absent from the first `m_knn`).
    pub knn_rank: Vec<f64>,
    /// Rank score plus smoothing noise (equal to `knn_rank` when deterministic).
    pub knn: Vec<f64>,
    /// Contrastive score per label (`+∞` when no support neighbor carries it).
    pub clr: Vec<f64>,
}

/// Smallest 1-based rank at which each label first appears among the first
/// `m_knn` ranked labels.
pub(crate) fn rank_scores(ranked_labels: &[usize], m_knn: usize, class_count: usize) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; class_count];
    for (k, &y) in ranked_labels.iter().take(m_knn).enumerate() {
        if out[y].is_infinite() {
            out[y] = (k + 1) as f64;
        }
    }
    out
}

/// Contrastive losses of the support set against its anchor, reduced to a
/// per-label minimum. `anchor_similarity[j] = K(A, Q_j)`.
pub(crate) fn clr_label_scores(
    anchor_similarity: &[f64],
    support_labels: &[usize],
    temperature: f64,
    class_count: usize,
) -> Vec<f64> {
    let logits: Vec<f64> = anchor_similarity
        .iter()
        .map(|k| -2.0 * (1.0 - k) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut out = vec![f64::INFINITY; class_count];
    for (&l, &y) in logits.iter().zip(support_labels) {
        let loss = lse - l;
        if loss < out[y] {
            out[y] = loss;
        }
    }
    out
}

/// Scores points against a reference index under one score configuration.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodScorer<'a> {
    index: &'a ProjectedIndex,
    kernel: KernelShape,
    cfg: &'a ScoreConfig,
}

impl<'a> NeighborhoodScorer<'a> {
    pub fn new(index: &'a ProjectedIndex, kernel: &KernelParams, cfg: &'a ScoreConfig) -> Result<Self> {
        cfg.validate()?;
        if kernel.dim() != index.dim() {
            return Err(DanceError::DimensionMismatch {
                expected: index.dim(),
                actual: kernel.dim(),
            });
        }
        Ok(Self {
            index,
            kernel: kernel.scalars(),
            cfg,
        })
    }

    pub fn index(&self) -> &ProjectedIndex {
        self.index
    }

    pub fn config(&self) -> &ScoreConfig {
        self.cfg
    }

    pub fn class_count(&self) -> usize {
        self.index.class_count()
    }

    pub fn neighbors(&self, z: &[f64], exclude: Option<usize>) -> Result<NeighborList> {
        let pz = self.index.project(z)?;
        self.index.knn_projected(&pz, self.cfg.neighborhood(), exclude)
    }

    pub fn point_scores(&self, z: &[f64], point_id: u64, exclude: Option<usize>) -> Result<PointScores> {
        let nn = self.neighbors(z, exclude)?;
        Ok(self.scores_from_neighbors(&nn, point_id))
    }

    pub fn scores_from_neighbors(&self, nn: &NeighborList, point_id: u64) -> PointScores {
        let c = self.class_count();
        let labels = self.index.labels();
        let neighbor_labels: Vec<usize> = nn.indices.iter().map(|&i| labels[i]).collect();

        let knn_rank = rank_scores(&neighbor_labels, self.cfg.m_knn, c);
        let knn = match self.cfg.smoothing {
            Smoothing::Deterministic => knn_rank.clone(),
            Smoothing::Smoothed => knn_rank
                .iter()
                .enumerate()
                .map(|(y, &s)| {
                    if s.is_finite() {
                        s + smoothing_noise(self.cfg.seed, point_id, y, self.cfg.noise_epsilon)
                    } else {
                        s
                    }
                })
                .collect(),
        };

        let support = &nn.indices[..self.cfg.m_clr.min(nn.len())];
        let anchor = support[0];
        let similarity: Vec<f64> = support
            .iter()
            .map(|&j| self.kernel.from_distance(self.index.reference_distance(anchor, j)))
            .collect();
        let clr = clr_label_scores(&similarity, &neighbor_labels[..support.len()], self.cfg.temperature, c);

        PointScores {
            neighbor_labels,
            knn_rank,
            knn,
            clr,
        }
    }

    /// Scores every row of `data`. With `leave_one_out`, row `i` of `data` is
    /// reference row `i` and is excluded from its own neighborhood.
    pub fn score_dataset(&self, data: &EmbeddedDataset, leave_one_out: bool) -> Result<Vec<PointScores>> {
        let projected = self.index.project_all(data)?;
        let m = self.cfg.neighborhood();
        (0..data.len())
            .into_par_iter()
            .map(|i| {
                let exclude = leave_one_out.then_some(i);
                let nn = self.index.knn_projected(projected.row(i), m, exclude)?;
                Ok(self.scores_from_neighbors(&nn, data.ids()[i]))
            })
            .collect()
    }
}

fn check_label(y: usize, c: usize) -> Result<()> {
    if y >= c {
        return Err(DanceError::LabelOutOfRange {
            label: y,
            class_count: c,
        });
    }
    Ok(())
}

/// Rank score of label `y` at `z`; smoothing noise is keyed by `point_id`.
pub fn score_knn(
    z: &[f64],
    y: usize,
    index: &ProjectedIndex,
    cfg: &ScoreConfig,
    exclude: Option<usize>,
    point_id: u64,
) -> Result<f64> {
    check_label(y, index.class_count())?;
    cfg.validate()?;
    let nn = {
        let pz = index.project(z)?;
        index.knn_projected(&pz, cfg.m_knn, exclude)?
    };
    let labels: Vec<usize> = nn.indices.iter().map(|&i| index.labels()[i]).collect();
    let s = rank_scores(&labels, cfg.m_knn, index.class_count())[y];
    Ok(match cfg.smoothing {
        Smoothing::Smoothed if s.is_finite() => s + smoothing_noise(cfg.seed, point_id, y, cfg.noise_epsilon),
        _ => s,
    })
}

pub fn score_clr(
    z: &[f64],
    y: usize,
    index: &ProjectedIndex,
    kernel: &KernelParams,
    cfg: &ScoreConfig,
    exclude: Option<usize>,
) -> Result<f64> {
    check_label(y, index.class_count())?;
    cfg.validate()?;
    let pz = index.project(z)?;
    let nn = index.knn_projected(&pz, cfg.m_clr, exclude)?;
    let shape = kernel.scalars();
    let anchor = nn.indices[0];
    let sim: Vec<f64> = nn
        .indices
        .iter()
        .map(|&j| shape.from_distance(index.reference_distance(anchor, j)))
        .collect();
    let labels: Vec<usize> = nn.indices.iter().map(|&i| index.labels()[i]).collect();
    Ok(clr_label_scores(&sim, &labels, cfg.temperature, index.class_count())[y])
}

/// Fraction of the `k` nearest neighbors whose label differs from `y`.
pub fn score_deep_knn(z: &[f64], y: usize, index: &ProjectedIndex, k: usize, exclude: Option<usize>) -> Result<f64> {
    check_label(y, index.class_count())?;
    let pz = index.project(z)?;
    let nn = index.knn_projected(&pz, k, exclude)?;
    Ok(deep_knn_from_labels(nn.indices.iter().map(|&i| index.labels()[i]), y))
}

pub(crate) fn deep_knn_from_labels(labels: impl ExactSizeIterator<Item = usize>, y: usize) -> f64 {
    let k = labels.len();
    let miss = labels.filter(|&l| l != y).count();
    miss as f64 / k as f64
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DanceError::invalid("probabilities must be finite and nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DanceError::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Cumulative mass down to and including `y` in descending order (ties by
/// label), and the 1-based rank of `y` in that order.
fn cumulative_mass(p: &[f64], y: usize) -> (f64, usize) {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    for (rank, &label) in order.iter().enumerate() {
        mass += p[label];
        if label == y {
            return (mass, rank + 1);
        }
    }
    unreachable!("label checked against the simplex length")
}

/// Deterministic APS score (no randomized tie splitting).
pub fn score_aps(probabilities: &[f64], y: usize) -> Result<f64> {
    check_label(y, probabilities.len())?;
    check_simplex(probabilities)?;
    Ok(cumulative_mass(probabilities, y).0)
}

pub fn score_raps(probabilities: &[f64], y: usize, lambda_raps: f64, k_raps: usize) -> Result<f64> {
    check_label(y, probabilities.len())?;
    check_simplex(probabilities)?;
    let (mass, rank) = cumulative_mass(probabilities, y);
    Ok(mass + lambda_raps * rank.saturating_sub(k_raps) as f64)
}
