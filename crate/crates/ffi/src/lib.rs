//! C ABI over relapse-core.
//!
//! Every function returns a [`RelapseStatus`]; on failure the message is
//! available from [`relapse_last_error`] on the same thread. Models are opaque
//! handles released with their `_free` function. Matrices are dense row-major
//! `n x p` arrays of doubles; labels are bytes, nonzero meaning positive.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use relapse_core::metrics::{pr_auc, roc_auc};
use relapse_core::models::{
    predict_proba_forest, predict_proba_logistic, train_forest, train_logistic, ForestParams, LogisticModel,
    LogisticParams, MaxFeatures, RandomForestModel,
};
use relapse_core::synthetic::{bayes_optimal_auc, SyntheticSpec};
use relapse_core::{matrix::Matrix, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelapseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Configuration or spec error.
    Config = 3,
    /// Input data rejected by the pipeline.
    Data = 4,
    /// Outputs written but some units failed.
    Partial = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RelapseStatus {
    match err {
        Error::Config(_) | Error::Spec { .. } => RelapseStatus::Config,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::NonFinite(_) => {
            RelapseStatus::InvalidArgument
        }
        _ => RelapseStatus::Data,
    }
}

struct Fail(RelapseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RelapseStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, recording errors and catching panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RelapseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RelapseStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RelapseStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn labels(y: *const u8, n: usize) -> Result<Vec<bool>, Fail> {
    Ok(slice(y, n, "y")?.iter().map(|&v| v != 0).collect())
}

unsafe fn matrix(x: *const f64, n: usize, p: usize) -> Result<Matrix, Fail> {
    let len = n
        .checked_mul(p)
        .ok_or_else(|| Fail(RelapseStatus::InvalidArgument, "n * p overflows".into()))?;
    Ok(Matrix::new(n, p, slice(x, len, "x")?.to_vec())?)
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(RelapseStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn relapse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relapse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Area under the ROC curve; ties count one half.
///
/// # Safety
/// `scores` and `y` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relapse_roc_auc(scores: *const f64, y: *const u8, n: usize, out: *mut f64) -> RelapseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = roc_auc(slice(scores, n, "scores")?, &labels(y, n)?)?;
        *out = v;
        Ok(())
    })
}

/// Area under the precision-recall curve (average precision).
///
/// # Safety
/// `scores` and `y` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relapse_pr_auc(scores: *const f64, y: *const u8, n: usize, out: *mut f64) -> RelapseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = pr_auc(slice(scores, n, "scores")?, &labels(y, n)?)?;
        *out = v;
        Ok(())
    })
}

/// Opaque L2-penalized logistic regression.
pub struct RelapseLogistic {
    model: LogisticModel,
}

/// Fits a logistic model with inverse regularization strength `c`.
///
/// # Safety
/// `x` must hold `n * p` doubles, `y` `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relapse_logistic_fit(
    x: *const f64,
    y: *const u8,
    n: usize,
    p: usize,
    c: f64,
    out: *mut *mut RelapseLogistic,
) -> RelapseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = train_logistic(&matrix(x, n, p)?, &labels(y, n)?, &LogisticParams::with_c(c))?;
        *out = Box::into_raw(Box::new(RelapseLogistic { model }));
        Ok(())
    })
}

/// Writes `n` positive-class probabilities to `out`.
///
/// # Safety
/// `model` must come from `relapse_logistic_fit`; `x` must hold `n * p` doubles
/// and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn relapse_logistic_predict(
    model: *const RelapseLogistic,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut f64,
) -> RelapseStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let probs = predict_proba_logistic(&m.model, &matrix(x, n, p)?)?;
        slice_mut(out, n, "out")?.copy_from_slice(&probs);
        Ok(())
    })
}

/// Copies the `p` weights and the intercept.
///
/// # Safety
/// `weights` must have room for `p` doubles; `intercept` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relapse_logistic_coefficients(
    model: *const RelapseLogistic,
    weights: *mut f64,
    p: usize,
    intercept: *mut f64,
) -> RelapseStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if p != m.model.n_features() {
            return Err(Fail(
                RelapseStatus::InvalidArgument,
                format!("model has {} features, caller passed {p}", m.model.n_features()),
            ));
        }
        if intercept.is_null() {
            return Err(null("intercept"));
        }
        slice_mut(weights, p, "weights")?.copy_from_slice(&m.model.weights);
        *intercept = m.model.intercept;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from `relapse_logistic_fit`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relapse_logistic_free(model: *mut RelapseLogistic) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Random forest hyperparameters. `max_features` 0 means the square root of
/// the feature count.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RelapseForestParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub max_features: usize,
    pub min_samples_leaf: usize,
}

/// Opaque Gini random forest.
pub struct RelapseForest {
    model: RandomForestModel,
}

/// Defaults: 100 trees, bootstrap on, square-root features, leaves of at least 1.
#[no_mangle]
pub extern "C" fn relapse_forest_default_params() -> RelapseForestParams {
    let d = ForestParams::default();
    RelapseForestParams {
        n_estimators: d.n_estimators,
        bootstrap: d.bootstrap,
        max_features: 0,
        min_samples_leaf: d.min_samples_leaf,
    }
}

/// Fits a forest; the result depends only on the inputs and `seed`.
///
/// # Safety
/// `x` must hold `n * p` doubles, `y` `n` bytes; `params` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relapse_forest_fit(
    x: *const f64,
    y: *const u8,
    n: usize,
    p: usize,
    params: *const RelapseForestParams,
    seed: u64,
    out: *mut *mut RelapseForest,
) -> RelapseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let prm = params.as_ref().ok_or_else(|| null("params"))?;
        let fp = ForestParams {
            n_estimators: prm.n_estimators,
            bootstrap: prm.bootstrap,
            max_features: match prm.max_features {
                0 => MaxFeatures::Sqrt,
                k => MaxFeatures::Count(k),
            },
            min_samples_leaf: prm.min_samples_leaf,
        };
        let model = train_forest(&matrix(x, n, p)?, &labels(y, n)?, &fp, seed)?;
        *out = Box::into_raw(Box::new(RelapseForest { model }));
        Ok(())
    })
}

/// Writes `n` positive-class probabilities to `out`.
///
/// # Safety
/// `model` must come from `relapse_forest_fit`; `x` must hold `n * p` doubles
/// and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn relapse_forest_predict(
    model: *const RelapseForest,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut f64,
) -> RelapseStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let probs = predict_proba_forest(&m.model, &matrix(x, n, p)?)?;
        slice_mut(out, n, "out")?.copy_from_slice(&probs);
        Ok(())
    })
}

/// Copies the `p` impurity importances, which sum to one.
///
/// # Safety
/// `out` must have room for `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn relapse_forest_importances(
    model: *const RelapseForest,
    out: *mut f64,
    p: usize,
) -> RelapseStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if p != m.model.importances.len() {
            return Err(Fail(
                RelapseStatus::InvalidArgument,
                format!("model has {} features, caller passed {p}", m.model.importances.len()),
            ));
        }
        slice_mut(out, p, "out")?.copy_from_slice(&m.model.importances);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from `relapse_forest_fit`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relapse_forest_free(model: *mut RelapseForest) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Best achievable AUC for a synthetic spec given as TOML text.
///
/// # Safety
/// `spec_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relapse_bayes_optimal_auc(
    spec_toml: *const c_char,
    n_mc: usize,
    out: *mut f64,
) -> RelapseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: SyntheticSpec = toml::from_str(c_str(spec_toml, "spec_toml")?)
            .map_err(|e| Fail(RelapseStatus::Config, e.to_string()))?;
        let spec = spec.resolved()?;
        *out = bayes_optimal_auc(&spec, n_mc);
        Ok(())
    })
}

/// Runs a command line as the `relapse` program would, e.g.
/// `{"relapse", "run", "--config", "run.toml"}`.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn relapse_main(argc: usize, argv: *const *const c_char) -> RelapseStatus {
    let mut code = 0;
    let status = guard(|| {
        let args = slice(argv, argc, "argv")?
            .iter()
            .map(|&a| c_str(a, "argv[i]").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        code = relapse_core::cli::run_args(args);
        Ok(())
    });
    if status != RelapseStatus::Ok {
        return status;
    }
    match code {
        0 => RelapseStatus::Ok,
        2 => RelapseStatus::Config,
        4 => RelapseStatus::Partial,
        _ => RelapseStatus::Data,
    }
}
