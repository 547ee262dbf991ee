//! File formats: datasets, fitted adapters, calibration artifacts, reports.

mod dataset;
mod model;
mod report;

use std::fs;
use std::path::Path;

use crate::conformal::CalibrationArtifact;
use crate::error::{DanceError, Result};

pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_HEADER_LEN, DATASET_MAGIC, DATASET_VERSION,
};
pub use model::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use report::{to_canonical_json, write_report, FixedPrecisionFormatter, ReportDocument};

/// Calibration artifacts are plain JSON; infinite thresholds are `"inf"`.
pub fn write_artifact(art: &CalibrationArtifact, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(art).map_err(|e| DanceError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_artifact(path: impl AsRef<Path>) -> Result<CalibrationArtifact> {
    let text = fs::read_to_string(path)?;
    let art: CalibrationArtifact =
        serde_json::from_str(&text).map_err(|e| DanceError::Format(format!("calibration artifact: {e}")))?;
    art.validate()?;
    Ok(art)
}

/// Little-endian cursor over a byte slice; running past the end is a
/// format error.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DanceError::Format(format!("truncated payload at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
