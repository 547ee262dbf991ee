//! Mahalanobis generalized Laplace kernel and the dense linear algebra
//! around it.
//!
//! `K_M(a, b) = exp(-(‖a - b‖_M / L)^(1/ξ))` with `‖v‖_M = sqrt(v M vᵀ)`.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, DanceError, Result};
use crate::matrix::{squared_euclidean, Matrix};

/// Relative asymmetry tolerated by [`FeatureMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL * λ_max` count as zero.
pub const PSD_TOL: f64 = 1e-8;
/// Quadratic forms down to this value are clamped to zero.
pub const QUAD_FORM_TOL: f64 = 1e-12;

/// Symmetric positive semi-definite `d×d` metric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(DanceError::DimensionMismatch {
                expected: m.rows(),
                actual: m.cols(),
            });
        }
        if m.rows() == 0 {
            return Err(DanceError::invalid("feature matrix must be at least 1x1"));
        }
        m.check_finite("feature matrix")?;
        let asym = m.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(DanceError::NotPsd(format!(
                "relative asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}"
            )));
        }
        let (lo, hi) = eigen_range(&m);
        if lo < -PSD_TOL * hi.max(0.0) {
            return Err(DanceError::NotPsd(format!(
                "smallest eigenvalue {lo:e} below tolerance (largest {hi:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `v M vᵀ`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let m = &self.0;
        let mut acc = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            acc += vi * crate::matrix::dot(m.row(i), v);
        }
        acc
    }
}

fn eigen_range(m: &Matrix) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrized(m).to_nalgebra());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn symmetrized(m: &Matrix) -> Matrix {
    let mut s = m.clone();
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    s
}

/// Metric, bandwidth `L` and shape `ξ` of the generalized Laplace kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub feature_matrix: FeatureMatrix,
    pub bandwidth: f64,
    pub shape: f64,
}

impl KernelParams {
    pub fn new(feature_matrix: FeatureMatrix, bandwidth: f64, shape: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(DanceError::invalid(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        if !(shape.is_finite() && shape > 0.0) {
            return Err(DanceError::invalid(format!("shape must be > 0, got {shape}")));
        }
        Ok(Self {
            feature_matrix,
            bandwidth,
            shape,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_matrix.dim()
    }

    pub fn scalars(&self) -> KernelShape {
        KernelShape {
            bandwidth: self.bandwidth,
            shape: self.shape,
        }
    }
}

/// Bandwidth and shape without the metric; enough to turn an
/// already-measured M-distance into a kernel value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub bandwidth: f64,
    pub shape: f64,
}

impl KernelShape {
    #[inline]
    pub fn from_distance(&self, distance: f64) -> f64 {
        if distance == 0.0 {
            return 1.0;
        }
        (-(distance / self.bandwidth).powf(1.0 / self.shape)).exp()
    }
}

pub fn mahalanobis_distance(z1: &[f64], z2: &[f64], m: &FeatureMatrix) -> Result<f64> {
    ensure_dim(m.dim(), z1.len())?;
    ensure_dim(m.dim(), z2.len())?;
    let diff: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
    let q = m.quadratic_form(&diff);
    if q < -QUAD_FORM_TOL {
        return Err(DanceError::NotPsd(format!("negative quadratic form {q:e}")));
    }
    Ok(q.max(0.0).sqrt())
}

pub fn kernel_eval(z1: &[f64], z2: &[f64], p: &KernelParams) -> Result<f64> {
    let r = mahalanobis_distance(z1, z2, &p.feature_matrix)?;
    let k = p.scalars().from_distance(r);
    if !k.is_finite() {
        return Err(DanceError::NonFinite(format!("kernel value at distance {r}")));
    }
    Ok(k)
}

/// Rows of `z` mapped through `S = M^{1/2}`; Euclidean distances between
/// projected rows are M-distances between the originals.
pub fn project_rows(z: &Matrix, sqrt_m: &FeatureMatrix) -> Result<Matrix> {
    ensure_dim(sqrt_m.dim(), z.cols())?;
    // S is symmetric so Z·S = Z·Sᵀ
    z.matmul(sqrt_m.matrix())
}

/// `|a| × |b|` matrix of kernel evaluations.
pub fn kernel_matrix(a: &Matrix, b: &Matrix, p: &KernelParams) -> Result<Matrix> {
    ensure_dim(p.dim(), a.cols())?;
    ensure_dim(p.dim(), b.cols())?;
    let s = psd_sqrt(&p.feature_matrix)?;
    let pa = project_rows(a, &s)?;
    let pb = project_rows(b, &s)?;
    let shape = p.scalars();
    let cols = b.rows();
    let data: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let ai = pa.row(i);
            let pb = &pb;
            (0..cols).map(move |j| shape.from_distance(squared_euclidean(ai, pb.row(j)).sqrt()))
        })
        .collect();
    let k = Matrix::from_vec(a.rows(), cols, data)?;
    k.check_finite("kernel matrix")?;
    Ok(k)
}

/// Symmetric Gram matrix `K(Z, Z)`; exactly symmetric with unit diagonal.
pub fn kernel_gram(z: &Matrix, p: &KernelParams) -> Result<Matrix> {
    let mut k = kernel_matrix(z, z, p)?;
    let n = k.rows();
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = k[(i, j)];
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Symmetric square root of a PSD matrix. Negative eigenvalues (numerical
/// noise) are clamped to zero before the root is taken.
pub fn psd_sqrt(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let raw = m.matrix();
    if raw.asymmetry() > SYMMETRY_TOL {
        return Err(DanceError::NotPsd("asymmetric input to psd_sqrt".into()));
    }
    let d = raw.rows();
    let eig = SymmetricEigen::try_new(symmetrized(raw).to_nalgebra(), f64::EPSILON, 0)
        .ok_or_else(|| DanceError::NotPsd("eigendecomposition did not converge".into()))?;
    let vecs = &eig.eigenvectors;
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut s = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for (k, &r) in roots.iter().enumerate() {
                acc += vecs[(i, k)] * r * vecs[(j, k)];
            }
            s[(i, j)] = acc;
            s[(j, i)] = acc;
        }
    }
    s.check_finite("psd_sqrt")?;
    Ok(FeatureMatrix(s))
}

const MAX_JITTER_DOUBLINGS: usize = 3;

/// Solves `(k + ridge·I) β = y` by Cholesky factorization, retrying with a
/// growing diagonal jitter when the factorization breaks down.
pub fn solve_regularized(k: &Matrix, y: &Matrix, ridge: f64) -> Result<Matrix> {
    if !k.is_square() {
        return Err(DanceError::DimensionMismatch {
            expected: k.rows(),
            actual: k.cols(),
        });
    }
    ensure_dim(k.rows(), y.rows())?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(DanceError::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    if k.asymmetry() > SYMMETRY_TOL {
        return Err(DanceError::invalid("kernel matrix is not symmetric"));
    }
    let n = k.rows();
    let base = k.to_nalgebra();
    let rhs = y.to_nalgebra();
    let trace = k.trace();
    let unit = if trace > 0.0 { 1e-8 * trace / n as f64 } else { 1e-8 };

    let mut jitter = 0.0;
    for attempt in 0..=MAX_JITTER_DOUBLINGS + 1 {
        let mut a = base.clone();
        for i in 0..n {
            a[(i, i)] += ridge + jitter;
        }
        if let Some(chol) = a.cholesky() {
            let beta = Matrix::from_nalgebra(&chol.solve(&rhs));
            if beta.all_finite() {
                return Ok(beta);
            }
        }
        jitter = if attempt == 0 { unit } else { jitter * 2.0 };
    }
    Err(DanceError::Singular {
        attempts: MAX_JITTER_DOUBLINGS + 1,
    })
}
