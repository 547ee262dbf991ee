//! Embedding dataset files.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! "DNCE" | u32 version = 1 | u64 n | u64 d | u64 c | n·d × f32 (row-major) | n × u32 label
//! ```
//!
//! Files ending in `.csv` hold one row per line: `d` decimal values followed
//! by the integer label. Lines starting with `#` are comments; a leading
//! `# classes=<c>` comment fixes the class count (otherwise `max label + 1`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ByteReader;
use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::matrix::Matrix;

pub const DATASET_MAGIC: &[u8; 4] = b"DNCE";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: usize = 4 + 4 + 3 * 8;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EmbeddedDataset> {
    let path = path.as_ref();
    if is_csv(path) {
        return read_csv(&fs::read_to_string(path)?);
    }
    decode_dataset(&fs::read(path)?)
}

pub fn write_dataset(data: &EmbeddedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        encode_csv(data)?
    } else {
        encode_dataset(data)
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| DanceError::Format(format!("{what} {v} does not fit in memory")))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EmbeddedDataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != DATASET_MAGIC {
        return Err(DanceError::Format("bad magic, expected \"DNCE\"".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(DanceError::Format(format!("unsupported dataset version {version}")));
    }
    let n = to_usize(r.u64()?, "row count")?;
    let d = to_usize(r.u64()?, "dimension")?;
    let c = to_usize(r.u64()?, "class count")?;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(DATASET_HEADER_LEN))
        .ok_or_else(|| DanceError::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(DanceError::Format(format!(
            "payload length mismatch: header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(DanceError::NonFinite(format!("embedding value {v}")));
        }
        values.push(f64::from(v));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32()? as usize);
    }
    EmbeddedDataset::new(Matrix::from_vec(n, d, values)?, labels, c)
}

/// Narrowing to `f32` rounds to nearest, ties to even.
pub fn encode_dataset(data: &EmbeddedDataset) -> Vec<u8> {
    let (n, d) = (data.len(), data.dim());
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + 4 * n * d + 4 * n);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [n, d, data.class_count()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &v in data.embeddings().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in data.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

fn csv_error(line: usize, msg: impl std::fmt::Display) -> DanceError {
    DanceError::Format(format!("csv record {line}: {msg}"))
}

fn read_csv(text: &str) -> Result<EmbeddedDataset> {
    let declared_classes = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .and_then(|l| l.trim().strip_prefix("classes="))
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| DanceError::Format(format!("bad class count '{v}'")))
        })
        .transpose()?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(i + 1, e))?;
        if record.len() < 2 {
            return Err(csv_error(i + 1, "need at least one value and a label"));
        }
        let d = record.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(csv_error(
                i + 1,
                format!("expected {} values, got {d}", dim.unwrap_or(0)),
            ));
        }
        for field in record.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_error(i + 1, format!("bad value '{field}'")))?;
            values.push(v);
        }
        let label = &record[d];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| csv_error(i + 1, format!("bad label '{label}'")))?,
        );
    }
    let d = dim.ok_or_else(|| DanceError::Format("csv file has no data rows".into()))?;
    let c = declared_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    EmbeddedDataset::new(Matrix::from_vec(labels.len(), d, values)?, labels, c)
}

fn encode_csv(data: &EmbeddedDataset) -> Result<Vec<u8>> {
    let mut out = format!("# classes={}\n", data.class_count()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for (row, &y) in data.embeddings().row_iter().zip(data.labels()) {
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(y.to_string());
            w.write_record(&fields).map_err(|e| DanceError::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(out)
}
