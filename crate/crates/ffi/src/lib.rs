//! C ABI over the CASNSC predictor.
//!
//! Models and predictions cross the boundary as opaque handles. Every
//! function returns a [`CasnscStatus`]; on failure the message is available
//! from [`casnsc_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use casnsc::context::LightState;
use casnsc::predictor::{Prediction, TrainedModel};
use casnsc::trajkit::Trajectory;
use casnsc::Error;

/// Result codes shared by all entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasnscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    Numerical = 6,
    Panic = 7,
}

/// A trained model loaded from disk.
pub struct CasnscModel {
    inner: TrainedModel,
}

/// Weighted rollout hypotheses for one observed prefix.
pub struct CasnscPrediction {
    inner: Prediction,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> CasnscStatus {
    match err {
        Error::InvalidInput(_) | Error::OutOfGrid { .. } | Error::UndefinedDirection(_) | Error::Config(_) => {
            CasnscStatus::InvalidArgument
        }
        Error::Io { .. } => CasnscStatus::Io,
        Error::Format { .. } | Error::VersionMismatch { .. } => CasnscStatus::Format,
        Error::Model(_) | Error::Training(_) => CasnscStatus::Model,
        Error::Numerical(_) => CasnscStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CasnscStatus, String)>) -> CasnscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CasnscStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CasnscStatus::Panic
        }
    }
}

fn fail(err: Error) -> (CasnscStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (CasnscStatus, String) {
    (CasnscStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CasnscStatus, String) {
    (CasnscStatus::InvalidArgument, msg.into())
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn casnsc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn casnsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file written by `casnsc train`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn casnsc_model_load(path: *const c_char, out: *mut *mut CasnscModel) -> CasnscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
        let model = casnsc::io::read_model(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(CasnscModel { inner: model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`casnsc_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn casnsc_model_free(model: *mut CasnscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of dictionary atoms (motion primitives).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_model_num_atoms(model: *const CasnscModel, out: *mut usize) -> CasnscStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.num_atoms();
        Ok(())
    })
}

/// Whether the model conditions on the traffic lights (1) or not (0).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_model_uses_lights(model: *const CasnscModel, out: *mut c_int) -> CasnscStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = c_int::from(model.inner.feature_set.uses_lights());
        Ok(())
    })
}

/// Predicts the continuation of an observed prefix.
///
/// `t`, `x`, `y` hold `n` samples in time order. `t1` is nonzero when the
/// crossing light T1 is green; it is ignored by models without context.
///
/// # Safety
/// The arrays must hold `n` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_predict(
    model: *const CasnscModel,
    t: *const f64,
    x: *const f64,
    y: *const f64,
    n: usize,
    t1: c_int,
    horizon: f64,
    dt: f64,
    out: *mut *mut CasnscPrediction,
) -> CasnscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if t.is_null() || x.is_null() || y.is_null() {
            return Err(null("sample array"));
        }
        if n == 0 {
            return Err(invalid("no samples"));
        }
        let (t, x, y) = (
            std::slice::from_raw_parts(t, n),
            std::slice::from_raw_parts(x, n),
            std::slice::from_raw_parts(y, n),
        );
        let triples: Vec<(f64, f64, f64)> = (0..n).map(|i| (t[i], x[i], y[i])).collect();
        let observed = Trajectory::from_triples(&triples).map_err(fail)?;
        let pred = model
            .inner
            .predict(&observed, LightState::from_t1(t1 != 0), horizon, dt)
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(CasnscPrediction { inner: pred }));
        Ok(())
    })
}

/// Releases a prediction. Null is ignored.
///
/// # Safety
/// `pred` must come from [`casnsc_predict`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn casnsc_prediction_free(pred: *mut CasnscPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Number of hypotheses, ordered as the model's outgoing transitions.
///
/// # Safety
/// `pred` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_prediction_num_hypotheses(
    pred: *const CasnscPrediction,
    out: *mut usize,
) -> CasnscStatus {
    guard(|| {
        let pred = pred.as_ref().ok_or_else(|| null("prediction"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = pred.inner.hypotheses.len();
        Ok(())
    })
}

/// Target atom, posterior weight and rollout length (start point included)
/// of hypothesis `i`. Any output pointer may be null.
///
/// # Safety
/// `pred` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_prediction_hypothesis(
    pred: *const CasnscPrediction,
    i: usize,
    atom: *mut usize,
    weight: *mut f64,
    num_points: *mut usize,
) -> CasnscStatus {
    guard(|| {
        let pred = pred.as_ref().ok_or_else(|| null("prediction"))?;
        let h = pred
            .inner
            .hypotheses
            .get(i)
            .ok_or_else(|| invalid(format!("hypothesis {i} out of range")))?;
        if let Some(a) = atom.as_mut() {
            *a = h.atom;
        }
        if let Some(w) = weight.as_mut() {
            *w = h.weight;
        }
        if let Some(p) = num_points.as_mut() {
            *p = h.rollout.points.len();
        }
        Ok(())
    })
}

/// Copies the rollout of hypothesis `i` into `xy` as interleaved x, y pairs.
/// `capacity` counts points, so `xy` must hold `2 * capacity` doubles.
///
/// # Safety
/// `pred` must be a live handle and `xy` must hold `2 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn casnsc_prediction_points(
    pred: *const CasnscPrediction,
    i: usize,
    xy: *mut f64,
    capacity: usize,
) -> CasnscStatus {
    guard(|| {
        let pred = pred.as_ref().ok_or_else(|| null("prediction"))?;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let h = pred
            .inner
            .hypotheses
            .get(i)
            .ok_or_else(|| invalid(format!("hypothesis {i} out of range")))?;
        let pts = &h.rollout.points;
        if capacity < pts.len() {
            return Err(invalid(format!("capacity {capacity} < {} points", pts.len())));
        }
        let dst = std::slice::from_raw_parts_mut(xy, 2 * pts.len());
        for (k, &(px, py)) in pts.iter().enumerate() {
            dst[2 * k] = px;
            dst[2 * k + 1] = py;
        }
        Ok(())
    })
}

/// Modified Hausdorff distance between two interleaved x, y point sets.
///
/// # Safety
/// `a` must hold `2 * na` doubles, `b` `2 * nb`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn casnsc_mhd(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> CasnscStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("point array"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let pairs = |p: *const f64, n: usize| -> Vec<(f64, f64)> {
            std::slice::from_raw_parts(p, 2 * n).chunks_exact(2).map(|c| (c[0], c[1])).collect()
        };
        *out = casnsc::evalkit::mhd(&pairs(a, na), &pairs(b, nb)).map_err(fail)?;
        Ok(())
    })
}
