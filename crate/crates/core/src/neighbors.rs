//! Exact nearest neighbors in the learned metric.
//!
//! Reference rows are stored pre-multiplied by `M^{1/2}`, so plain
//! Euclidean distance between projected rows is the M-distance.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::dataset::EmbeddedDataset;
use crate::error::{ensure_dim, DanceError, Result};
use crate::kernel::{project_rows, psd_sqrt, FeatureMatrix};
use crate::matrix::{squared_euclidean, Matrix};

#[derive(Debug, Clone)]
pub struct ProjectedIndex {
    projected: Matrix,
    labels: Vec<usize>,
    ids: Vec<u64>,
    class_count: usize,
    sqrt_feature_matrix: FeatureMatrix,
}

/// Neighbors in ascending distance; equal distances are ordered by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// First `k` neighbors (or all of them if fewer).
    pub fn truncated(&self, k: usize) -> NeighborList {
        let k = k.min(self.len());
        NeighborList {
            indices: self.indices[..k].to_vec(),
            distances: self.distances[..k].to_vec(),
        }
    }
}

pub fn build_index(reference: &EmbeddedDataset, m: &FeatureMatrix) -> Result<ProjectedIndex> {
    ensure_dim(m.dim(), reference.dim())?;
    let sqrt_m = psd_sqrt(m)?;
    let projected = project_rows(reference.embeddings(), &sqrt_m)?;
    Ok(ProjectedIndex {
        projected,
        labels: reference.labels().to_vec(),
        ids: reference.ids().to_vec(),
        class_count: reference.class_count(),
        sqrt_feature_matrix: sqrt_m,
    })
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl ProjectedIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.projected.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn projected_rows(&self) -> &Matrix {
        &self.projected
    }

    pub fn projected_row(&self, i: usize) -> &[f64] {
        self.projected.row(i)
    }

    pub fn sqrt_feature_matrix(&self) -> &FeatureMatrix {
        &self.sqrt_feature_matrix
    }

    /// `z · M^{1/2}`, computed exactly as the reference rows were.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), z.len())?;
        let row = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(project_rows(&row, &self.sqrt_feature_matrix)?.into_vec())
    }

    pub fn project_all(&self, data: &EmbeddedDataset) -> Result<Matrix> {
        ensure_dim(self.dim(), data.dim())?;
        project_rows(data.embeddings(), &self.sqrt_feature_matrix)
    }

    /// Nearest `k` reference rows to an already-projected query.
    pub fn knn_projected(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Result<NeighborList> {
        ensure_dim(self.dim(), query.len())?;
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k == 0 || k > available {
            return Err(DanceError::invalid(format!(
                "requested {k} neighbors but only {available} reference rows are available"
            )));
        }
        let mut cand: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| (squared_euclidean(query, self.projected.row(i)).sqrt(), i))
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_distance_then_index);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_distance_then_index);
        Ok(NeighborList {
            indices: cand.iter().map(|c| c.1).collect(),
            distances: cand.iter().map(|c| c.0).collect(),
        })
    }

    /// Projected distance between two reference rows.
    pub fn reference_distance(&self, i: usize, j: usize) -> f64 {
        squared_euclidean(self.projected.row(i), self.projected.row(j)).sqrt()
    }

    /// Whether `data` holds exactly the reference rows, in order (the
    /// calibration-reuse layout).
    pub fn is_built_from(&self, data: &EmbeddedDataset) -> Result<bool> {
        if data.len() != self.len() || data.labels() != self.labels.as_slice() {
            return Ok(false);
        }
        let p = self.project_all(data)?;
        Ok(p.as_slice() == self.projected.as_slice())
    }

    /// Whether any row of `data` coincides with a reference row.
    pub fn overlaps(&self, data: &EmbeddedDataset) -> Result<bool> {
        let key = |row: &[f64]| -> Vec<u64> { row.iter().map(|v| (v + 0.0).to_bits()).collect() };
        let seen: HashSet<Vec<u64>> = self.projected.row_iter().map(key).collect();
        let p = self.project_all(data)?;
        let hit = p.row_iter().any(|r| seen.contains(&key(r)));
        Ok(hit)
    }
}

pub fn knn_query(index: &ProjectedIndex, query: &[f64], k: usize, exclude: Option<usize>) -> Result<NeighborList> {
    let q = index.project(query)?;
    index.knn_projected(&q, k, exclude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::mahalanobis_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn line(points: &[f64]) -> EmbeddedDataset {
        let rows: Vec<[f64; 1]> = points.iter().map(|&p| [p]).collect();
        let labels = (0..points.len()).map(|i| i % 2).collect();
        EmbeddedDataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn identity_projection_is_noop() {
        let ds = line(&[0.0, 1.5, -2.0]);
        let idx = build_index(&ds, &FeatureMatrix::identity(1)).unwrap();
        assert_eq!(idx.projected_rows(), ds.embeddings());
    }

    #[test]
    fn diagonal_metric_scales_rows() {
        let ds = EmbeddedDataset::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![0], 1).unwrap();
        let m = FeatureMatrix::new(Matrix::from_diagonal(&[4.0, 1.0])).unwrap();
        let idx = build_index(&ds, &m).unwrap();
        let row = idx.projected_row(0);
        assert!((row[0] - 2.0).abs() < 1e-15 && (row[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_query() {
        let idx = build_index(&line(&[0.0, 1.0, 4.0]), &FeatureMatrix::identity(1)).unwrap();
        let nn = knn_query(&idx, &[0.9], 2, None).unwrap();
        assert_eq!(nn.indices, vec![1, 0]);
        assert!((nn.distances[0] - 0.1).abs() < 1e-12 && (nn.distances[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn exclusion_and_ties() {
        let idx = build_index(&line(&[0.0, 1.0, 4.0]), &FeatureMatrix::identity(1)).unwrap();
        let nn = knn_query(&idx, &[1.0], 1, Some(1)).unwrap();
        assert_eq!(nn.indices, vec![0]);

        let idx = build_index(&line(&[2.0, -2.0, 5.0]), &FeatureMatrix::identity(1)).unwrap();
        let nn = knn_query(&idx, &[0.0], 2, None).unwrap();
        assert_eq!(nn.indices, vec![0, 1]);
    }

    #[test]
    fn too_many_neighbors_rejected() {
        let idx = build_index(&line(&[0.0, 1.0, 4.0]), &FeatureMatrix::identity(1)).unwrap();
        assert!(knn_query(&idx, &[0.0], 3, Some(0)).is_err());
        assert!(knn_query(&idx, &[0.0], 4, None).is_err());
        assert!(knn_query(&idx, &[0.0], 0, None).is_err());
        assert!(knn_query(&idx, &[0.0, 1.0], 1, None).is_err());
    }

    #[test]
    fn reuse_and_overlap_detection() {
        let ds = line(&[0.0, 1.0, 4.0]);
        let idx = build_index(&ds, &FeatureMatrix::identity(1)).unwrap();
        assert!(idx.is_built_from(&ds).unwrap());
        assert!(idx.overlaps(&ds).unwrap());
        let other = line(&[7.0, 9.0, 11.0]);
        assert!(!idx.is_built_from(&other).unwrap());
        assert!(!idx.overlaps(&other).unwrap());
    }

    fn random_index(seed: u64, n: usize, d: usize, grid: bool) -> (EmbeddedDataset, ProjectedIndex, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // integer grid coordinates force plenty of distance ties
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            if grid {
                rng.gen_range(-3..=3) as f64
            } else {
                rng.gen_range(-1.0..1.0)
            }
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| draw(&mut rng)).collect()).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let ds = EmbeddedDataset::new(Matrix::from_rows(&rows).unwrap(), labels, 4).unwrap();
        let idx = build_index(&ds, &FeatureMatrix::identity(d)).unwrap();
        let q: Vec<f64> = (0..d).map(|_| draw(&mut rng)).collect();
        (ds, idx, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_full_sort_oracle(seed in any::<u64>(), n in 2usize..500, grid in any::<bool>(), excl in any::<bool>()) {
            let (_, idx, q) = random_index(seed, n, 3, grid);
            let exclude = excl.then_some(seed as usize % n);
            let avail = n - usize::from(exclude.is_some());
            let k = 1 + (seed as usize / 7) % avail;
            let got = knn_query(&idx, &q, k, exclude).unwrap();

            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&i| Some(i) != exclude)
                .map(|i| (squared_euclidean(&q, idx.projected_row(i)).sqrt(), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(&got.indices, &want);
            prop_assert!(got.distances.windows(2).all(|w| w[0] <= w[1]));

            // prefix property
            if k < avail {
                let bigger = knn_query(&idx, &q, k + 1, exclude).unwrap();
                prop_assert_eq!(&bigger.indices[..k], &got.indices[..]);
            }
        }

        #[test]
        fn exclusion_keeps_relative_order(seed in any::<u64>(), n in 3usize..100) {
            let (_, idx, q) = random_index(seed, n, 2, true);
            let full = knn_query(&idx, &q, n, None).unwrap();
            let ex = full.indices[seed as usize % n];
            let without = knn_query(&idx, &q, n - 1, Some(ex)).unwrap();
            let expected: Vec<usize> = full.indices.iter().copied().filter(|&i| i != ex).collect();
            prop_assert_eq!(without.indices, expected);
        }

        #[test]
        fn projected_distance_is_mahalanobis(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_vec(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let m = FeatureMatrix::new(a.matmul(&a.transpose()).unwrap()).unwrap_or_else(|_| FeatureMatrix::identity(4));
            let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let ds = EmbeddedDataset::new(Matrix::from_rows(&rows).unwrap(), vec![0; 6], 1).unwrap();
            let idx = build_index(&ds, &m).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let maha = mahalanobis_distance(&rows[i], &rows[j], &m).unwrap();
                    let proj = idx.reference_distance(i, j);
                    prop_assert!((maha - proj).abs() <= 1e-8 * maha.max(1e-3));
                }
            }
        }
    }
}
