use crate::error::{ensure_dim, DanceError, Result};
use crate::matrix::Matrix;

/// Labeled embedding vectors: `n × d` matrix plus one label in `[0, c)` per row.
///
/// `ids` identify rows across subsets (a split keeps the ids of the parent
/// dataset) and key the smoothing-noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    embeddings: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    ids: Vec<u64>,
}

impl EmbeddedDataset {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(embeddings, labels, class_count, ids)
    }

    pub fn with_ids(embeddings: Matrix, labels: Vec<usize>, class_count: usize, ids: Vec<u64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(DanceError::invalid("dataset must contain at least one row"));
        }
        if embeddings.cols() == 0 {
            return Err(DanceError::invalid("embedding dimension must be at least 1"));
        }
        ensure_dim(embeddings.rows(), labels.len())?;
        ensure_dim(labels.len(), ids.len())?;
        if class_count == 0 {
            return Err(DanceError::invalid("class count must be at least 1"));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DanceError::LabelOutOfRange { label, class_count });
        }
        embeddings.check_finite("dataset embeddings")?;
        Ok(Self {
            embeddings,
            labels,
            class_count,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Replaces row ids, e.g. to keep query ids apart from calibration ids.
    pub fn reassign_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        ensure_dim(self.len(), ids.len())?;
        self.ids = ids;
        Ok(self)
    }

    /// Rows at `indices`, in that order, keeping their ids.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(DanceError::invalid("subset would be empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DanceError::invalid(format!("row {bad} out of range")));
        }
        Ok(Self {
            embeddings: self.embeddings.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        })
    }

    pub fn check_compatible(&self, other: &EmbeddedDataset) -> Result<()> {
        ensure_dim(self.dim(), other.dim())?;
        if self.class_count != other.class_count {
            return Err(DanceError::invalid(format!(
                "class counts differ: {} vs {}",
                self.class_count, other.class_count
            )));
        }
        Ok(())
    }
}
