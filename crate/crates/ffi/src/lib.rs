//! C ABI over `dance-core`.
//!
//! Every entry point returns a [`DanceStatus`]; on failure a message is
//! available from [`dance_last_error_message`] on the same thread. Objects
//! cross the boundary as opaque handles that the caller releases with the
//! matching `*_free` function. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dance_core::conformal::{select_lambda, LambdaReference, LambdaWeights, DEFAULT_LAMBDA_GRID};
use dance_core::eval::fit_adapter;
use dance_core::io::{read_dataset, read_model, write_artifact, write_dataset, write_model};
use dance_core::neighbors::build_index;
use dance_core::{
    DanceError, EmbeddedDataset, ErrorKind, Matrix, ReferenceMode, RfmConfig, RfmModel, ScoreConfig, Smoothing,
};

/// Pass as `lambda` to select it from the default grid on the calibration set.
pub const DANCE_LAMBDA_GRID: f64 = -1.0;

/// Offset added to row numbers in batch prediction, matching the CLI.
pub const DANCE_QUERY_ID_OFFSET: u64 = 0x8000_0000_0000_0000;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DanceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Format = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DanceScoreConfig {
    pub m_knn: usize,
    pub m_clr: usize,
    pub temperature: f64,
    pub noise_epsilon: f64,
    /// Non-zero adds the Uniform(0, ε) tie-breaking noise to rank scores.
    pub smoothed: u8,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DanceRfmConfig {
    pub iterations: usize,
    pub tuning_budget: usize,
    pub seed: u64,
}

pub struct DanceDataset {
    inner: EmbeddedDataset,
}

pub struct DanceModel {
    inner: RfmModel,
}

pub struct DancePredictor {
    inner: dance_core::DancePredictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DanceStatus, String);

impl From<DanceError> for Failure {
    fn from(e: DanceError) -> Self {
        let status = match (&e, e.kind()) {
            (DanceError::Format(_), _) => DanceStatus::Format,
            (_, ErrorKind::Io) => DanceStatus::Io,
            (_, ErrorKind::Numerical) => DanceStatus::Numerical,
            (_, ErrorKind::Validation) => DanceStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> DanceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DanceStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DanceStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DanceStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DanceStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn checked_len(a: usize, b: usize) -> FfiResult<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(DanceStatus::InvalidArgument, "size overflows".into()))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dance_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn dance_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn dance_score_config_default() -> DanceScoreConfig {
    let d = ScoreConfig::default();
    DanceScoreConfig {
        m_knn: d.m_knn,
        m_clr: d.m_clr,
        temperature: d.temperature,
        noise_epsilon: d.noise_epsilon,
        smoothed: u8::from(d.smoothing == Smoothing::Smoothed),
        seed: d.seed,
    }
}

#[no_mangle]
pub extern "C" fn dance_rfm_config_default() -> DanceRfmConfig {
    let d = RfmConfig::default();
    DanceRfmConfig {
        iterations: d.iterations,
        tuning_budget: d.tuning_budget,
        seed: d.seed,
    }
}

impl From<&DanceScoreConfig> for ScoreConfig {
    fn from(c: &DanceScoreConfig) -> Self {
        ScoreConfig {
            m_knn: c.m_knn,
            m_clr: c.m_clr,
            temperature: c.temperature,
            noise_epsilon: c.noise_epsilon,
            smoothing: if c.smoothed != 0 {
                Smoothing::Smoothed
            } else {
                Smoothing::Deterministic
            },
            seed: c.seed,
        }
    }
}

/// Copies `n × d` row-major embeddings and `n` labels into a new dataset.
///
/// # Safety
/// `rows` must point to `n * d` doubles, `labels` to `n` values, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dance_dataset_new(
    rows: *const f64,
    labels: *const u32,
    n: usize,
    d: usize,
    class_count: usize,
    out: *mut *mut DanceDataset,
) -> DanceStatus {
    guard(|| {
        let rows = slice_arg(rows, checked_len(n, d)?, "rows")?;
        let labels = slice_arg(labels, n, "labels")?;
        let m = Matrix::from_vec(n, d, rows.to_vec())?;
        let labels = labels.iter().map(|&y| y as usize).collect();
        put(
            out,
            DanceDataset {
                inner: EmbeddedDataset::new(m, labels, class_count)?,
            },
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dance_dataset_read(path: *const c_char, out: *mut *mut DanceDataset) -> DanceStatus {
    guard(|| {
        let inner = read_dataset(path_arg(path)?)?;
        put(out, DanceDataset { inner })
    })
}

/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dance_dataset_write(data: *const DanceDataset, path: *const c_char) -> DanceStatus {
    guard(|| Ok(write_dataset(&deref(data, "dataset")?.inner, path_arg(path)?)?))
}

/// Row count, dimension and class count; any output pointer may be NULL.
///
/// # Safety
/// `data` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dance_dataset_shape(
    data: *const DanceDataset,
    n: *mut usize,
    d: *mut usize,
    class_count: *mut usize,
) -> DanceStatus {
    guard(|| {
        let data = &deref(data, "dataset")?.inner;
        for (p, v) in [(n, data.len()), (d, data.dim()), (class_count, data.class_count())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dance_dataset_free(data: *mut DanceDataset) {
    release(data);
}

/// Tunes and trains the kernel adapter on `support`. `config` may be NULL
/// for defaults.
///
/// # Safety
/// `support` must be a live handle, `config` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dance_model_fit(
    support: *const DanceDataset,
    config: *const DanceRfmConfig,
    out: *mut *mut DanceModel,
) -> DanceStatus {
    guard(|| {
        let support = deref(support, "support dataset")?.inner.clone();
        let c = config.as_ref().copied().unwrap_or_else(|| dance_rfm_config_default());
        let rfm = RfmConfig {
            iterations: c.iterations,
            tuning_budget: c.tuning_budget,
            seed: c.seed,
            ..RfmConfig::default()
        };
        let adapter = fit_adapter(support, &rfm, c.seed)?;
        put(out, DanceModel { inner: adapter.model })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dance_model_read(path: *const c_char, out: *mut *mut DanceModel) -> DanceStatus {
    guard(|| {
        let inner = read_model(path_arg(path)?)?;
        put(out, DanceModel { inner })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dance_model_write(model: *const DanceModel, path: *const c_char) -> DanceStatus {
    guard(|| Ok(write_model(&deref(model, "model")?.inner, path_arg(path)?)?))
}

/// Kernel bandwidth, shape and validation accuracy; any output may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dance_model_info(
    model: *const DanceModel,
    bandwidth: *mut f64,
    shape: *mut f64,
    validation_accuracy: *mut f64,
) -> DanceStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        for (p, v) in [
            (bandwidth, m.kernel().bandwidth),
            (shape, m.kernel().shape),
            (validation_accuracy, m.validation_accuracy),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dance_model_free(model: *mut DanceModel) {
    release(model);
}

/// Calibrates a predictor. A NULL `reference` reuses `cal` as the neighbor
/// reference (leave-one-out calibration); otherwise `reference` must be
/// disjoint from `cal`. Pass [`DANCE_LAMBDA_GRID`] to select `lambda`.
///
/// # Safety
/// `model` and `cal` must be live handles, `reference` NULL or live,
/// `config` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_calibrate(
    model: *const DanceModel,
    cal: *const DanceDataset,
    reference: *const DanceDataset,
    alpha: f64,
    lambda: f64,
    config: *const DanceScoreConfig,
    out: *mut *mut DancePredictor,
) -> DanceStatus {
    guard(|| {
        let kernel = deref(model, "model")?.inner.kernel().clone();
        let cal = &deref(cal, "calibration dataset")?.inner;
        let reference = reference.as_ref().map(|r| &r.inner);
        let cfg = config.as_ref().map_or_else(ScoreConfig::default, ScoreConfig::from);
        let mode = if reference.is_some() {
            ReferenceMode::Disjoint
        } else {
            ReferenceMode::Reuse
        };
        let index = build_index(reference.unwrap_or(cal), &kernel.feature_matrix)?;
        let lambda = if lambda == DANCE_LAMBDA_GRID {
            let r = match mode {
                ReferenceMode::Reuse => LambdaReference::Reuse,
                ReferenceMode::Disjoint => LambdaReference::Disjoint(&index),
            };
            select_lambda(
                cal,
                r,
                &kernel,
                alpha,
                &DEFAULT_LAMBDA_GRID,
                &cfg,
                LambdaWeights::default(),
                cfg.seed,
            )?
        } else {
            lambda
        };
        let art = dance_core::conformal::calibrate(cal, &index, &kernel, alpha, lambda, mode, &cfg)?;
        let inner = dance_core::DancePredictor::new(index, kernel, art)?;
        put(out, DancePredictor { inner })
    })
}

/// Selected λ and the two branch thresholds (`+∞` when a branch is off);
/// any output may be NULL.
///
/// # Safety
/// `predictor` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_thresholds(
    predictor: *const DancePredictor,
    lambda: *mut f64,
    q_knn: *mut f64,
    q_clr: *mut f64,
) -> DanceStatus {
    guard(|| {
        let art = deref(predictor, "predictor")?.inner.artifact();
        for (p, v) in [(lambda, art.lambda), (q_knn, art.q_knn), (q_clr, art.q_clr)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Writes the calibration artifact as JSON.
///
/// # Safety
/// `predictor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_write_artifact(
    predictor: *const DancePredictor,
    path: *const c_char,
) -> DanceStatus {
    guard(|| {
        Ok(write_artifact(
            deref(predictor, "predictor")?.inner.artifact(),
            path_arg(path)?,
        )?)
    })
}

/// Prediction set for one embedding as a 0/1 membership mask of length
/// `class_count`. `point_id` keys the smoothing noise.
///
/// # Safety
/// `predictor` must be a live handle, `z` must point to `d` doubles and
/// `mask` to `class_count` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_predict(
    predictor: *const DancePredictor,
    z: *const f64,
    d: usize,
    point_id: u64,
    mask: *mut u8,
    class_count: usize,
) -> DanceStatus {
    guard(|| {
        let p = &deref(predictor, "predictor")?.inner;
        let z = slice_arg(z, d, "embedding")?;
        let c = p.class_count();
        if class_count < c {
            return Err(Failure(
                DanceStatus::BufferTooSmall,
                format!("mask holds {class_count} labels, need {c}"),
            ));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        let set = p.predict(z, point_id)?;
        let mask = std::slice::from_raw_parts_mut(mask, c);
        mask.fill(0);
        for &y in set.labels() {
            mask[y] = 1;
        }
        Ok(())
    })
}

/// Prediction sets for every row of `queries` as an `n × class_count`
/// row-major membership mask. Row `i` uses point id
/// `DANCE_QUERY_ID_OFFSET + i`.
///
/// # Safety
/// `predictor` and `queries` must be live handles and `masks` must point to
/// `mask_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_predict_dataset(
    predictor: *const DancePredictor,
    queries: *const DanceDataset,
    masks: *mut u8,
    mask_len: usize,
) -> DanceStatus {
    guard(|| {
        let p = &deref(predictor, "predictor")?.inner;
        let q = &deref(queries, "query dataset")?.inner;
        let c = p.class_count();
        let need = checked_len(q.len(), c)?;
        if mask_len < need {
            return Err(Failure(
                DanceStatus::BufferTooSmall,
                format!("mask buffer holds {mask_len} bytes, need {need}"),
            ));
        }
        if masks.is_null() {
            return Err(null("masks"));
        }
        let ids = (0..q.len() as u64).map(|i| DANCE_QUERY_ID_OFFSET + i).collect();
        let q = q.clone().reassign_ids(ids)?;
        let sets = p.branch_sets_all(&q)?;
        let out = std::slice::from_raw_parts_mut(masks, need);
        out.fill(0);
        for (row, b) in sets.iter().enumerate() {
            for &y in b.dance.labels() {
                out[row * c + y] = 1;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `predictor` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dance_predictor_free(predictor: *mut DancePredictor) {
    release(predictor);
}
