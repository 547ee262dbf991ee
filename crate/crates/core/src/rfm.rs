//! Recursive feature machine: kernel ridge regression whose Mahalanobis
//! metric is re-estimated from the average gradient outer product (AGOP)
//! of the previous fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddedDataset;
use crate::error::{ensure_dim, DanceError, Result};
use crate::kernel::{kernel_gram, kernel_matrix, solve_regularized, FeatureMatrix, KernelParams};
use crate::matrix::{dot, Matrix};

/// Distances below this contribute nothing to a predictor gradient.
pub const GRADIENT_SINGULAR_CUTOFF: f64 = 1e-12;
/// With `ξ > 1` the gradient blows up near coincident points; AGOP skips
/// pairs closer than this.
pub const AGOP_SINGULAR_CUTOFF: f64 = 1e-6;

/// One-hot label matrix, `n × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotLabels(Matrix);

impl OneHotLabels {
    pub fn from_labels(labels: &[usize], class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(DanceError::invalid("one-hot encoding needs at least 2 classes"));
        }
        let mut m = Matrix::zeros(labels.len(), class_count);
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(DanceError::LabelOutOfRange { label: y, class_count });
            }
            m[(i, y)] = 1.0;
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Fitted kernel ridge regressor `f(z) = K_M(z, Z) β`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub reference: Matrix,
    pub coefficients: Matrix,
    pub kernel: KernelParams,
    pub ridge: f64,
}

impl KrrModel {
    pub fn dim(&self) -> usize {
        self.reference.cols()
    }

    pub fn class_count(&self) -> usize {
        self.coefficients.cols()
    }

    pub fn predict(&self, queries: &Matrix) -> Result<Matrix> {
        krr_predict(self, queries)
    }
}

pub fn krr_fit(z: &Matrix, y: &OneHotLabels, kernel: &KernelParams, ridge: f64) -> Result<KrrModel> {
    if z.rows() == 0 {
        return Err(DanceError::invalid("cannot fit KRR on zero rows"));
    }
    ensure_dim(kernel.dim(), z.cols())?;
    ensure_dim(z.rows(), y.matrix().rows())?;
    let gram = kernel_gram(z, kernel)?;
    let coefficients = solve_regularized(&gram, y.matrix(), ridge)?;
    Ok(KrrModel {
        reference: z.clone(),
        coefficients,
        kernel: kernel.clone(),
        ridge,
    })
}

/// Logits `K(queries, Z) β`, one row per query.
pub fn krr_predict(model: &KrrModel, queries: &Matrix) -> Result<Matrix> {
    ensure_dim(model.dim(), queries.cols())?;
    let k = kernel_matrix(queries, &model.reference, &model.kernel)?;
    k.matmul(&model.coefficients)
}

/// `Z M`, reused across gradient evaluations.
fn metric_times(z: &Matrix, m: &FeatureMatrix) -> Result<Matrix> {
    z.matmul(m.matrix())
}

fn gradient_impl(model: &KrrModel, reference_m: &Matrix, z: &[f64], zm: &[f64], cutoff: f64) -> Result<Matrix> {
    let d = model.dim();
    let c = model.class_count();
    let bandwidth = model.kernel.bandwidth;
    let shape = model.kernel.shape;
    let scalars = model.kernel.scalars();
    let mut grad = Matrix::zeros(d, c);
    let mut diff = vec![0.0; d];
    let mut mdiff = vec![0.0; d];
    for j in 0..model.reference.rows() {
        let x = model.reference.row(j);
        let xm = reference_m.row(j);
        for a in 0..d {
            diff[a] = z[a] - x[a];
            mdiff[a] = zm[a] - xm[a];
        }
        let r = dot(&diff, &mdiff).max(0.0).sqrt();
        if r < cutoff {
            continue;
        }
        let k = scalars.from_distance(r);
        let coef = -k / (shape * bandwidth) * (r / bandwidth).powf(1.0 / shape - 1.0) / r;
        let beta = model.coefficients.row(j);
        for (a, &m) in mdiff.iter().enumerate() {
            let g = coef * m;
            if g == 0.0 {
                continue;
            }
            for (out, &b) in grad.row_mut(a).iter_mut().zip(beta) {
                *out += g * b;
            }
        }
    }
    grad.check_finite("predictor gradient")?;
    Ok(grad)
}

/// Input gradient of the KRR predictor at `z`, as a `d × c` matrix whose
/// column `k` is `∇_z f_k(z)`.
pub fn predictor_gradient(model: &KrrModel, z: &[f64]) -> Result<Matrix> {
    ensure_dim(model.dim(), z.len())?;
    let m = &model.kernel.feature_matrix;
    let reference_m = metric_times(&model.reference, m)?;
    let zm = m.matrix().mul_vec(z)?;
    gradient_impl(model, &reference_m, z, &zm, GRADIENT_SINGULAR_CUTOFF)
}

/// Average gradient outer product `(1/n) Σ_i G_i G_iᵀ` over the rows of `z`.
pub fn agop(model: &KrrModel, z: &Matrix) -> Result<FeatureMatrix> {
    if z.rows() == 0 {
        return Err(DanceError::invalid("AGOP needs at least one sample"));
    }
    ensure_dim(model.dim(), z.cols())?;
    let m = &model.kernel.feature_matrix;
    let reference_m = metric_times(&model.reference, m)?;
    let zm_all = metric_times(z, m)?;
    let cutoff = if model.kernel.shape > 1.0 {
        AGOP_SINGULAR_CUTOFF
    } else {
        GRADIENT_SINGULAR_CUTOFF
    };
    let d = model.dim();
    let outers: Vec<Matrix> = (0..z.rows())
        .into_par_iter()
        .map(|i| {
            let g = gradient_impl(model, &reference_m, z.row(i), zm_all.row(i), cutoff)?;
            Ok(outer_upper(&g))
        })
        .collect::<Result<_>>()?;

    let mut acc = Matrix::zeros(d, d);
    // sequential sum in sample order: identical for any thread count
    for o in &outers {
        for a in 0..d {
            for b in a..d {
                acc[(a, b)] += o[(a, b)];
            }
        }
    }
    let n = z.rows() as f64;
    for a in 0..d {
        for b in a..d {
            let v = acc[(a, b)] / n;
            acc[(a, b)] = v;
            acc[(b, a)] = v;
        }
    }
    FeatureMatrix::new(acc)
}

/// Upper triangle of `G Gᵀ`.
fn outer_upper(g: &Matrix) -> Matrix {
    let d = g.rows();
    let mut o = Matrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            o[(a, b)] = dot(g.row(a), g.row(b));
        }
    }
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfmConfig {
    pub iterations: usize,
    pub tuning_budget: usize,
    pub bandwidth_range: (f64, f64),
    pub shape_range: (f64, f64),
    pub ridge_range: (f64, f64),
    pub seed: u64,
}

impl Default for RfmConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            tuning_budget: 25,
            bandwidth_range: (0.1, 100.0),
            shape_range: (0.5, 2.0),
            ridge_range: (1e-6, 1e-1),
            seed: 0,
        }
    }
}

impl RfmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("bandwidth", self.bandwidth_range),
            ("shape", self.shape_range),
            ("ridge", self.ridge_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(DanceError::invalid(format!(
                    "{name} range must satisfy 0 < low <= high, got ({lo}, {hi})"
                )));
            }
        }
        if self.tuning_budget == 0 {
            return Err(DanceError::invalid("tuning budget must be at least 1"));
        }
        Ok(())
    }
}

/// RFM fit retained at its best validation iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RfmModel {
    pub krr: KrrModel,
    pub learned_feature_matrix: FeatureMatrix,
    pub validation_accuracy: f64,
    pub selected_iteration: usize,
}

impl RfmModel {
    pub fn kernel(&self) -> &KernelParams {
        &self.krr.kernel
    }

    pub fn logits(&self, queries: &Matrix) -> Result<Matrix> {
        krr_predict(&self.krr, queries)
    }

    pub fn accuracy(&self, data: &EmbeddedDataset) -> Result<f64> {
        let logits = self.logits(data.embeddings())?;
        Ok(top1_accuracy(&logits, data.labels()))
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn top1_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Alternates KRR fits and AGOP metric updates for `config.iterations`
/// rounds starting from the metric in `kernel_init` (normally `I`).
///
/// Each new metric is rescaled to trace `d`. The iteration with the best
/// validation accuracy is kept; iteration 0 is a candidate and later
/// iterations win ties.
pub fn rfm_train(
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    kernel_init: &KernelParams,
    ridge: f64,
    config: &RfmConfig,
) -> Result<RfmModel> {
    train.check_compatible(val)?;
    ensure_dim(kernel_init.dim(), train.dim())?;
    let y = OneHotLabels::from_labels(train.labels(), train.class_count())?;
    let d = train.dim() as f64;

    let mut kernel = kernel_init.clone();
    let mut best: Option<RfmModel> = None;
    for t in 0..=config.iterations {
        let krr = krr_fit(train.embeddings(), &y, &kernel, ridge)?;
        let logits = krr_predict(&krr, val.embeddings())?;
        let acc = top1_accuracy(&logits, val.labels());
        let improves = best.as_ref().is_none_or(|b| acc >= b.validation_accuracy);
        if t == config.iterations {
            if improves {
                best = Some(RfmModel {
                    learned_feature_matrix: kernel.feature_matrix.clone(),
                    krr,
                    validation_accuracy: acc,
                    selected_iteration: t,
                });
            }
            break;
        }
        let next = agop(&krr, train.embeddings())?;
        if improves {
            best = Some(RfmModel {
                learned_feature_matrix: kernel.feature_matrix.clone(),
                krr,
                validation_accuracy: acc,
                selected_iteration: t,
            });
        }
        let trace = next.matrix().trace();
        if !(trace.is_finite() && trace > 0.0) {
            // flat predictor: nothing left to learn
            break;
        }
        let mut m = next.into_matrix();
        m.scale(d / trace);
        kernel = KernelParams::new(FeatureMatrix::new(m)?, kernel.bandwidth, kernel.shape)?;
    }
    best.ok_or_else(|| DanceError::invalid("RFM produced no model"))
}

/// One sampled hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub bandwidth: f64,
    pub shape: f64,
    pub ridge: f64,
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo..=hi)
}

/// The seeded candidate stream; a larger budget extends a smaller one.
pub fn sample_candidates(config: &RfmConfig) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.tuning_budget)
        .map(|_| {
            let bandwidth = log_uniform(&mut rng, config.bandwidth_range);
            let shape = uniform(&mut rng, config.shape_range);
            let ridge = log_uniform(&mut rng, config.ridge_range);
            Candidate {
                bandwidth,
                shape,
                ridge,
            }
        })
        .collect()
}

/// Seeded random search over `(L, ξ, ridge)`, maximizing RFM validation
/// accuracy. Candidates whose fit fails numerically are skipped; ties go to
/// the earliest draw.
pub fn tune_hyperparameters(
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    config: &RfmConfig,
) -> Result<(KernelParams, f64, RfmModel)> {
    config.validate()?;
    train.check_compatible(val)?;
    let d = train.dim();
    let candidates = sample_candidates(config);
    let fits: Vec<Result<RfmModel>> = candidates
        .par_iter()
        .map(|c| {
            let init = KernelParams::new(FeatureMatrix::identity(d), c.bandwidth, c.shape)?;
            rfm_train(train, val, &init, c.ridge, config)
        })
        .collect();

    let mut best: Option<(usize, RfmModel)> = None;
    let mut last_err = None;
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(model) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| model.validation_accuracy > b.validation_accuracy);
                if better {
                    best = Some((i, model));
                }
            }
            Err(e) if e.kind() == crate::error::ErrorKind::Numerical => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((i, model)) => Ok((model.kernel().clone(), candidates[i].ridge, model)),
        None => Err(last_err.unwrap_or_else(|| DanceError::invalid("no tuning candidates"))),
    }
}
