use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};

/// Support / calibration / test proportions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.4, 0.4, 0.2],
            seed: 0,
        }
    }
}

/// `⌊r_i·n⌋` per part, then one extra row per part from the left until all
/// `n` rows are assigned.
pub fn partition_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(DanceError::invalid("split ratios must be finite and nonnegative"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(DanceError::invalid(format!("split ratios sum to {total}, not 1")));
    }
    let mut sizes: Vec<usize> = ratios.iter().map(|r| (r * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    // floating error could overshoot by one on pathological inputs
    if assigned > n {
        return Err(DanceError::invalid("split ratios over-assign rows"));
    }
    let k = sizes.len();
    for i in 0..(n - assigned) {
        sizes[i % k] += 1;
    }
    Ok(sizes)
}

pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle of `0..n` cut into contiguous parts; every part must be
/// non-empty.
pub fn split_indices(n: usize, ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = partition_sizes(n, ratios)?;
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(DanceError::invalid(format!(
            "split of {n} rows with ratios {ratios:?} leaves part {i} empty"
        )));
    }
    let idx = shuffled_indices(n, seed);
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(idx[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

/// `(support, calibration, test)`; rows keep their original ids.
pub fn split_dataset(
    data: &EmbeddedDataset,
    spec: &SplitSpec,
) -> Result<(EmbeddedDataset, EmbeddedDataset, EmbeddedDataset)> {
    if data.len() < 3 {
        return Err(DanceError::invalid("need at least 3 rows to split"));
    }
    let parts = split_indices(data.len(), &spec.ratios, spec.seed)?;
    Ok((
        data.subset(&parts[0])?,
        data.subset(&parts[1])?,
        data.subset(&parts[2])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    #[test]
    fn size_examples() {
        assert_eq!(partition_sizes(10, &[0.4, 0.4, 0.2]).unwrap(), vec![4, 4, 2]);
        assert_eq!(partition_sizes(7, &[0.4, 0.4, 0.2]).unwrap(), vec![3, 3, 1]);
        assert_eq!(partition_sizes(5, &[0.8, 0.2]).unwrap(), vec![4, 1]);
        assert!(partition_sizes(5, &[0.5, 0.6]).is_err());
        assert!(split_indices(2, &[0.4, 0.4, 0.2], 0).is_err());
    }

    #[test]
    fn same_seed_same_partition() {
        let rows: Vec<[f64; 1]> = (0..20).map(|i| [i as f64]).collect();
        let ds = EmbeddedDataset::new(Matrix::from_rows(&rows).unwrap(), vec![0; 20], 1).unwrap();
        let spec = SplitSpec {
            seed: 5,
            ..SplitSpec::default()
        };
        let a = split_dataset(&ds, &spec).unwrap();
        let b = split_dataset(&ds, &spec).unwrap();
        assert_eq!(a.0.ids(), b.0.ids());
        assert_eq!(a.2.ids(), b.2.ids());
        assert_eq!((a.0.len(), a.1.len(), a.2.len()), (8, 8, 4));
    }

    proptest! {
        #[test]
        fn splits_partition_the_rows(n in 3usize..400, seed in any::<u64>(), a in 0.05f64..0.9) {
            let b = (1.0 - a) / 2.0;
            let ratios = [a, b, 1.0 - a - b];
            if let Ok(parts) = split_indices(n, &ratios, seed) {
                let mut all: Vec<usize> = parts.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
                prop_assert_eq!(sizes, partition_sizes(n, &ratios).unwrap());
            }
        }
    }
}
