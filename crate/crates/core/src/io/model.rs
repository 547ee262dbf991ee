//! Fitted adapter files.
//!
//! Little-endian layout:
//!
//! ```text
//! "DNCM" | u32 version = 1 | u64 n | u64 d | u64 c
//! f64 bandwidth | f64 shape | f64 ridge | f64 validation accuracy | u64 selected iteration
//! d·d × f64 metric M | n·d × f64 reference embeddings | n·c × f64 coefficients
//! ```

use std::fs;
use std::path::Path;

use super::ByteReader;
use crate::error::{DanceError, Result};
use crate::kernel::{FeatureMatrix, KernelParams};
use crate::matrix::Matrix;
use crate::rfm::{KrrModel, RfmModel};

pub const MODEL_MAGIC: &[u8; 4] = b"DNCM";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &RfmModel) -> Vec<u8> {
    let krr = &model.krr;
    let (n, d, c) = (krr.reference.rows(), krr.reference.cols(), krr.coefficients.cols());
    let mut out = Vec::with_capacity(72 + 8 * (d * d + n * d + n * c));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [n, d, c] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in [
        krr.kernel.bandwidth,
        krr.kernel.shape,
        krr.ridge,
        model.validation_accuracy,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.selected_iteration as u64).to_le_bytes());
    let sections = [
        krr.kernel.feature_matrix.matrix().as_slice(),
        krr.reference.as_slice(),
        krr.coefficients.as_slice(),
    ];
    for section in sections {
        for v in section {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<RfmModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(DanceError::Format("bad magic, expected \"DNCM\"".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(DanceError::Format(format!("unsupported model version {version}")));
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let c = r.u64()? as usize;
    let bandwidth = r.f64()?;
    let shape = r.f64()?;
    let ridge = r.f64()?;
    let validation_accuracy = r.f64()?;
    let selected_iteration = r.u64()? as usize;
    let mut section = |rows: usize, cols: usize| -> Result<Matrix> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| DanceError::Format("section size overflows".into()))?;
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
        Matrix::from_vec(rows, cols, data)
    };
    let m = section(d, d)?;
    let reference = section(n, d)?;
    let coefficients = section(n, c)?;
    if !r.is_empty() {
        return Err(DanceError::Format("trailing bytes after model payload".into()));
    }
    reference.check_finite("reference embeddings")?;
    coefficients.check_finite("coefficients")?;
    let feature_matrix = FeatureMatrix::new(m)?;
    let kernel = KernelParams::new(feature_matrix.clone(), bandwidth, shape)?;
    Ok(RfmModel {
        krr: KrrModel {
            reference,
            coefficients,
            kernel,
            ridge,
        },
        learned_feature_matrix: feature_matrix,
        validation_accuracy,
        selected_iteration,
    })
}

pub fn write_model(model: &RfmModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<RfmModel> {
    decode_model(&fs::read(path)?)
}
