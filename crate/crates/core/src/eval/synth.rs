use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::matrix::Matrix;

/// Gaussian mixture with class means on the unit sphere of the first
/// `informative_dims` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub informative_dims: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn generate(&self) -> Result<EmbeddedDataset> {
        synth_gaussian_mixture(
            self.classes,
            self.dim,
            self.per_class,
            self.noise_sigma,
            self.informative_dims,
            self.seed,
        )
    }
}

/// Rows are interleaved by class: row `i` has label `i mod classes`.
pub fn synth_gaussian_mixture(
    classes: usize,
    dim: usize,
    per_class: usize,
    noise_sigma: f64,
    informative_dims: usize,
    seed: u64,
) -> Result<EmbeddedDataset> {
    if classes < 2 {
        return Err(DanceError::invalid("need at least 2 classes"));
    }
    if dim == 0 || per_class == 0 {
        return Err(DanceError::invalid("dimension and per-class count must be positive"));
    }
    if informative_dims == 0 || informative_dims > dim {
        return Err(DanceError::invalid(format!(
            "informative dimensions must lie in [1, {dim}], got {informative_dims}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(DanceError::invalid(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Matrix::zeros(classes, dim);
    for k in 0..classes {
        let row = means.row_mut(k);
        loop {
            let mut norm2 = 0.0;
            for v in row.iter_mut().take(informative_dims) {
                *v = StandardNormal.sample(&mut rng);
                norm2 += *v * *v;
            }
            if norm2 > 1e-12 {
                let norm = norm2.sqrt();
                row.iter_mut().take(informative_dims).for_each(|v| *v /= norm);
                break;
            }
        }
    }

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        for &mu in means.row(y) {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + noise_sigma * e);
        }
        labels.push(y);
    }
    EmbeddedDataset::new(Matrix::from_vec(n, dim, data)?, labels, classes)
}
