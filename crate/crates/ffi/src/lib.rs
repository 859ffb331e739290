//! C ABI over `ntk-lab`: Gram-matrix metrics and in-memory experiment runs.
//!
//! Every fallible function returns an [`NtkStatus`] and writes results
//! through out-pointers. On failure a message is kept per thread and can be
//! copied out with [`ntk_last_error_message`]. Handles are opaque and must be
//! released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ntk_lab::ntk::{cka, kernel_distance, kernel_velocity, max_eigenvalue, GramMatrix};
use ntk_lab::runner::{metrics::metrics_to_string, run_experiment, ExperimentConfig, RunOutput, RunStatus};
use ntk_lab::NtkError;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    NumericalError = 4,
    DataError = 5,
    IoError = 6,
    UndefinedSimilarity = 7,
    VersionError = 8,
    Diverged = 9,
    OutOfRange = 10,
    Panic = 11,
}

impl From<&NtkError> for NtkStatus {
    fn from(e: &NtkError) -> Self {
        match e {
            NtkError::Config(_) => NtkStatus::ConfigError,
            NtkError::Usage(_) => NtkStatus::InvalidArgument,
            NtkError::Numerical { .. } => NtkStatus::NumericalError,
            NtkError::Data(_) => NtkStatus::DataError,
            NtkError::Io { .. } => NtkStatus::IoError,
            NtkError::UndefinedSimilarity(_) => NtkStatus::UndefinedSimilarity,
            NtkError::Version(_) => NtkStatus::VersionError,
            NtkError::Diverged { .. } => NtkStatus::Diverged,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: NtkStatus, msg: impl Into<String>) -> NtkStatus {
    set_error(msg);
    status
}

fn from_error(e: NtkError) -> NtkStatus {
    let status = NtkStatus::from(&e);
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> NtkStatus) -> NtkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == NtkStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(NtkStatus::Panic, "internal panic"),
    }
}

/// Opaque symmetric kernel matrix.
pub struct NtkGram {
    inner: GramMatrix,
}

/// Opaque finished experiment.
pub struct NtkRun {
    output: RunOutput,
}

/// One probe step. Absent values (`kernel_distance_from_prev` and `velocity`
/// at the first steps, `train_loss` at step 0) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtkMetricRecord {
    pub global_step: usize,
    pub task_index: usize,
    pub iteration: usize,
    pub lambda_max: f64,
    pub kernel_distance_from_init: f64,
    pub kernel_distance_from_prev: f64,
    pub velocity: f64,
    pub alignment: f64,
    pub train_loss: f64,
    pub task1_test_accuracy: f64,
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(s) => s,
    Err(_) => panic!("version string has an interior NUL"),
};

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ntk_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the length needed including
/// the terminator, or 0 when there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ntk_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len) - 1;
            // SAFETY: caller guarantees `len` writable bytes at `buf`.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Builds an `n x n` kernel from row-major entries (symmetrized).
///
/// # Safety
/// `entries` must point to `n * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_gram_new(entries: *const f64, n: usize, out: *mut *mut NtkGram) -> NtkStatus {
    guard(|| {
        if entries.is_null() || out.is_null() {
            return fail(NtkStatus::NullPointer, "null argument to ntk_gram_new");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(NtkStatus::InvalidArgument, "matrix size overflows");
        };
        // SAFETY: caller guarantees n * n readable doubles.
        let data = unsafe { std::slice::from_raw_parts(entries, len) }.to_vec();
        match GramMatrix::new(n, data) {
            Ok(inner) => {
                // SAFETY: `out` checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(NtkGram { inner })) };
                NtkStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `gram` must be null or a handle from [`ntk_gram_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntk_gram_free(gram: *mut NtkGram) {
    if !gram.is_null() {
        // SAFETY: handle came from Box::into_raw in ntk_gram_new.
        drop(unsafe { Box::from_raw(gram) });
    }
}

/// # Safety
/// `gram` must be a live handle and `out` writable, or null.
unsafe fn with_gram(gram: *const NtkGram, out: *mut f64, f: impl FnOnce(&GramMatrix) -> ntk_lab::Result<f64>) -> NtkStatus {
    guard(|| {
        if gram.is_null() || out.is_null() {
            return fail(NtkStatus::NullPointer, "null handle or output");
        }
        // SAFETY: checked non-null; caller guarantees liveness.
        match f(unsafe { &(*gram).inner }) {
            Ok(v) => {
                unsafe { *out = v };
                NtkStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `a`, `b` must be live handles and `out` writable, or null.
unsafe fn with_pair(
    a: *const NtkGram,
    b: *const NtkGram,
    out: *mut f64,
    f: impl FnOnce(&GramMatrix, &GramMatrix) -> ntk_lab::Result<f64>,
) -> NtkStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(NtkStatus::NullPointer, "null handle or output");
        }
        // SAFETY: checked non-null; caller guarantees liveness.
        match f(unsafe { &(*a).inner }, unsafe { &(*b).inner }) {
            Ok(v) => {
                unsafe { *out = v };
                NtkStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Largest eigenvalue after PSD repair.
///
/// # Safety
/// `gram` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_gram_max_eigenvalue(gram: *const NtkGram, out: *mut f64) -> NtkStatus {
    unsafe { with_gram(gram, out, max_eigenvalue) }
}

/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_cka(a: *const NtkGram, b: *const NtkGram, centered: bool, out: *mut f64) -> NtkStatus {
    unsafe { with_pair(a, b, out, |a, b| cka(a, b, centered)) }
}

/// `1 - cka(a, b)`.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_distance(a: *const NtkGram, b: *const NtkGram, centered: bool, out: *mut f64) -> NtkStatus {
    unsafe { with_pair(a, b, out, |a, b| kernel_distance(a, b, centered)) }
}

/// Kernel distance divided by `dt` (which must be positive).
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_velocity(
    a: *const NtkGram,
    b: *const NtkGram,
    dt: usize,
    centered: bool,
    out: *mut f64,
) -> NtkStatus {
    unsafe { with_pair(a, b, out, |a, b| kernel_velocity(a, b, dt, centered)) }
}

/// Runs an experiment described by config-file text, in memory. A diverged
/// run still yields a handle (see [`ntk_run_diverged_at`]).
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_from_config(config_text: *const c_char, out: *mut *mut NtkRun) -> NtkStatus {
    guard(|| {
        if config_text.is_null() || out.is_null() {
            return fail(NtkStatus::NullPointer, "null argument to ntk_run_from_config");
        }
        // SAFETY: caller guarantees a NUL-terminated string.
        let Ok(text) = (unsafe { CStr::from_ptr(config_text) }).to_str() else {
            return fail(NtkStatus::InvalidArgument, "config text is not UTF-8");
        };
        let result = ExperimentConfig::from_text(text).and_then(|cfg| run_experiment(&cfg));
        match result {
            Ok(output) => {
                unsafe { *out = Box::into_raw(Box::new(NtkRun { output })) };
                NtkStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from [`ntk_run_from_config`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_free(run: *mut NtkRun) {
    if !run.is_null() {
        // SAFETY: handle came from Box::into_raw in ntk_run_from_config.
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Number of records, 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_record_count(run: *const NtkRun) -> usize {
    if run.is_null() {
        0
    } else {
        unsafe { (*run).output.records().len() }
    }
}

/// Whether the run diverged; if so and `iteration` is non-null, writes the
/// failing iteration there.
///
/// # Safety
/// `run` must be a live handle; `iteration` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_diverged_at(run: *const NtkRun, iteration: *mut usize) -> bool {
    if run.is_null() {
        return false;
    }
    match unsafe { (*run).output.status } {
        RunStatus::Completed => false,
        RunStatus::Diverged { iteration: it } => {
            if !iteration.is_null() {
                unsafe { *iteration = it };
            }
            true
        }
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_get_record(run: *const NtkRun, index: usize, out: *mut NtkMetricRecord) -> NtkStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return fail(NtkStatus::NullPointer, "null handle or output");
        }
        let records = unsafe { (*run).output.records() };
        let Some(r) = records.get(index) else {
            return fail(
                NtkStatus::OutOfRange,
                format!("record {index} of {}", records.len()),
            );
        };
        let absent = |v: Option<f64>| v.unwrap_or(f64::NAN);
        unsafe {
            *out = NtkMetricRecord {
                global_step: r.global_step,
                task_index: r.task_index,
                iteration: r.iteration,
                lambda_max: r.lambda_max,
                kernel_distance_from_init: r.kernel_distance_from_init,
                kernel_distance_from_prev: absent(r.kernel_distance_from_prev),
                velocity: absent(r.velocity),
                alignment: r.alignment,
                train_loss: absent(r.train_loss),
                task1_test_accuracy: r.task1_test_accuracy,
            }
        };
        NtkStatus::Ok
    })
}

/// Writes the run's metrics CSV to `path`.
///
/// # Safety
/// `run` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ntk_run_write_csv(run: *const NtkRun, path: *const c_char) -> NtkStatus {
    guard(|| {
        if run.is_null() || path.is_null() {
            return fail(NtkStatus::NullPointer, "null handle or path");
        }
        let Ok(path) = (unsafe { CStr::from_ptr(path) }).to_str() else {
            return fail(NtkStatus::InvalidArgument, "path is not UTF-8");
        };
        let path = Path::new(path);
        let text = match metrics_to_string(unsafe { &(*run).output.log }) {
            Ok(t) => t,
            Err(e) => return from_error(e),
        };
        match std::fs::write(path, text) {
            Ok(()) => NtkStatus::Ok,
            Err(e) => from_error(NtkError::io(path, e)),
        }
    })
}
