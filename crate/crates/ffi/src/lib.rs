//! C ABI for loading `ssbnn` checkpoints and calling the numeric core.
//!
//! Every fallible function returns an [`SsbnnStatus`]; on failure a message
//! is available from [`ssbnn_last_error`] on the same thread. Models are
//! opaque handles created by [`ssbnn_model_load`] and released with
//! [`ssbnn_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ssbnn::eval::{integrated_gradients, roc_points};
use ssbnn::layers::{model_kl, predict_proba, BnnModel};
use ssbnn::rng::seeded;
use ssbnn::vi::{kl_bernoulli, kl_gaussian_gaussian};
use ssbnn::{Error, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsbnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Domain = 4,
    Io = 5,
    Schema = 6,
    DegenerateLabels = 7,
    Panic = 8,
    Other = 9,
}

/// Opaque model handle.
pub struct SsbnnModel {
    model: BnnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SsbnnStatus {
    match err {
        Error::ShapeMismatch { .. } => SsbnnStatus::ShapeMismatch,
        Error::Domain(_) | Error::NonFinite(_) | Error::LabelDomain(_) | Error::DegenerateGroup => {
            SsbnnStatus::Domain
        }
        Error::Io(_) => SsbnnStatus::Io,
        Error::SchemaMismatch(_) | Error::Json(_) | Error::Csv(_) => SsbnnStatus::Schema,
        Error::DegenerateLabels => SsbnnStatus::DegenerateLabels,
        Error::InvalidConfig(_) => SsbnnStatus::InvalidArgument,
        _ => SsbnnStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsbnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsbnnStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SsbnnStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SsbnnStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SsbnnStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const SsbnnModel) -> Result<&'a BnnModel, Fail> {
    model.as_ref().map(|m| &m.model).ok_or(Fail::Null("model"))
}

unsafe fn out_ref<'a, T>(out: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    out.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ssbnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssbnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a JSON checkpoint into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_model_load(
    path: *const c_char,
    out: *mut *mut SsbnnModel,
) -> SsbnnStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
        let (model, _) = BnnModel::load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(SsbnnModel { model }));
        Ok(())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`ssbnn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_model_free(model: *mut SsbnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_model_input_dim(
    model: *const SsbnnModel,
    out: *mut usize,
) -> SsbnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out_ref(out, "out")? = m.input_dim();
        Ok(())
    })
}

/// Mean predictive probability over `samples` posterior draws for a
/// row-major `(rows, cols)` matrix. Writes `rows` values to `out`.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` room for `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_predict_proba(
    model: *const SsbnnModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail::Arg("rows * cols overflows".into()))?;
        let x = slice(x, n, "x")?;
        let out = slice_mut(out, rows, "out")?;
        let pred = predict_proba(
            m,
            &Tensor::new(vec![rows, cols], x.to_vec())?,
            samples,
            &mut seeded(seed),
        )?;
        out.copy_from_slice(&pred.mean);
        Ok(())
    })
}

/// Integrated Gradients of the posterior-mean logit against a zero
/// baseline. Writes `len` attributions and, if non-NULL, the completeness
/// residual.
///
/// # Safety
/// `x` and `out` must hold `len` doubles; `residual` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_integrated_gradients(
    model: *const SsbnnModel,
    x: *const f64,
    len: usize,
    steps: usize,
    out: *mut f64,
    residual: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = slice(x, len, "x")?;
        let out = slice_mut(out, len, "out")?;
        let a = integrated_gradients(m, x, &vec![0.0; len], steps)?;
        out.copy_from_slice(&a.scores);
        if let Some(r) = residual.as_mut() {
            *r = a.completeness_residual;
        }
        Ok(())
    })
}

/// Monte-Carlo estimate of the total KL with `m` draws.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_model_kl(
    model: *const SsbnnModel,
    m: usize,
    seed: u64,
    out: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        let model = model_ref(model)?;
        *out_ref(out, "out")? = model_kl(model, m, &mut seeded(seed))?;
        Ok(())
    })
}

/// KL(Bern(lambda_q) || Bern(lambda_p)); both must lie in (0, 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_kl_bernoulli(
    lambda_q: f64,
    lambda_p: f64,
    out: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        *out_ref(out, "out")? = kl_bernoulli(lambda_q, lambda_p)?;
        Ok(())
    })
}

/// KL(N(mu_q, sigma_q²) || N(mu_p, sigma_p²)).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_kl_gaussian(
    mu_q: f64,
    sigma_q: f64,
    mu_p: f64,
    sigma_p: f64,
    out: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        *out_ref(out, "out")? = kl_gaussian_gaussian(mu_q, sigma_q, mu_p, sigma_p)?;
        Ok(())
    })
}

/// Trapezoidal ROC AUC; `labels` are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssbnn_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> SsbnnStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        *out_ref(out, "out")? = roc_points(s, l)?.auc;
        Ok(())
    })
}
