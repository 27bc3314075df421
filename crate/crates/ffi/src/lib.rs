//! C ABI over the rotex library.
//!
//! Every fallible function returns a [`RotexStatus`]; on failure the message
//! is available from [`rotex_last_error`] on the same thread. Images are
//! passed as row-major `double` buffers. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rotex::features::FeatureExtractor;
use rotex::net::{softmax, Network, NetworkParams, PoolGrid};
use rotex::tensor::Tensor;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Opaque trained model: filter bank, classifier head and input
/// normalization.
pub struct RotexModel {
    params: NetworkParams,
    network: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &rotex::Error) -> RotexStatus {
    match err.exit_code() {
        3 => RotexStatus::Io,
        4 => RotexStatus::Numerical,
        _ => RotexStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), RotexStatus>) -> RotexStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RotexStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            RotexStatus::Panic
        }
    }
}

fn lib<T>(r: rotex::Result<T>) -> Result<T, RotexStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn fail<T>(status: RotexStatus, msg: &str) -> Result<T, RotexStatus> {
    set_error(msg);
    Err(status)
}

unsafe fn image(pixels: *const f64, rows: usize, cols: usize) -> Result<Tensor, RotexStatus> {
    if pixels.is_null() {
        return fail(RotexStatus::NullPointer, "pixel buffer is null");
    }
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n > 0)
        .ok_or(RotexStatus::InvalidArgument)
        .or_else(|s| fail(s, "image dimensions must be positive"))?;
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    lib(Tensor::from_vec(&[rows, cols], data))
}

unsafe fn model<'a>(m: *const RotexModel) -> Result<&'a RotexModel, RotexStatus> {
    m.as_ref().ok_or(RotexStatus::NullPointer).or_else(|s| fail(s, "model handle is null"))
}

/// Loads a checkpoint written by `rotex train`. On success `*out` owns a
/// handle that must be released with `rotex_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rotex_model_load(path: *const c_char, out: *mut *mut RotexModel) -> RotexStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(RotexStatus::NullPointer, "path or out pointer is null");
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| RotexStatus::InvalidArgument)
            .or_else(|s| fail(s, "path is not UTF-8"))?;
        let params = lib(rotex::io::load_checkpoint(&PathBuf::from(path)))?;
        let network = lib(Network::new(params.clone()))?;
        *out = Box::into_raw(Box::new(RotexModel { params, network }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `rotex_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rotex_model_free(model: *mut RotexModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Groups, rotations per group, filter side and class count of a model.
///
/// # Safety
/// `model` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn rotex_model_info(
    model: *const RotexModel,
    groups: *mut usize,
    orientations: *mut usize,
    size: *mut usize,
    classes: *mut usize,
) -> RotexStatus {
    guard(|| {
        let m = self::model(model)?;
        let bank = &m.params.bank;
        for (p, v) in [
            (groups, bank.groups),
            (orientations, bank.orientations),
            (size, bank.size),
            (classes, m.params.classes),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Length of a full descriptor vector (`8 * groups`).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rotex_feature_dim(model: *const RotexModel, out: *mut usize) -> RotexStatus {
    guard(|| {
        let m = self::model(model)?;
        if out.is_null() {
            return fail(RotexStatus::NullPointer, "out is null");
        }
        *out = 8 * m.params.bank.groups;
        Ok(())
    })
}

/// Descriptor vector of one image (the model's input normalization is
/// applied first). `out_len` must be at least `rotex_feature_dim`.
///
/// # Safety
/// `pixels` must hold `rows * cols` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn rotex_extract_features(
    model: *const RotexModel,
    pixels: *const f64,
    rows: usize,
    cols: usize,
    r_eval: usize,
    grid_rows: usize,
    grid_cols: usize,
    out: *mut f64,
    out_len: usize,
) -> RotexStatus {
    guard(|| {
        let m = self::model(model)?;
        let img = image(pixels, rows, cols)?;
        if out.is_null() {
            return fail(RotexStatus::NullPointer, "out is null");
        }
        let dim = 8 * m.params.bank.groups;
        if out_len < dim {
            return fail(RotexStatus::BufferTooSmall, &format!("need {} values, got {}", dim, out_len));
        }
        let mut ex = lib(FeatureExtractor::new(&m.params.bank, r_eval, PoolGrid::new(grid_rows, grid_cols)))?;
        let f = lib(ex.extract(&m.params.normalization.apply(&img)))?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&f.values);
        Ok(())
    })
}

/// Class probabilities from the softmax head and the predicted label.
/// `probs` may be null; otherwise it must hold `probs_len >= classes` values.
///
/// # Safety
/// `pixels` must hold `rows * cols` values and `label` be writable.
#[no_mangle]
pub unsafe extern "C" fn rotex_predict(
    model: *const RotexModel,
    pixels: *const f64,
    rows: usize,
    cols: usize,
    probs: *mut f64,
    probs_len: usize,
    label: *mut usize,
) -> RotexStatus {
    guard(|| {
        let m = self::model(model)?;
        let img = image(pixels, rows, cols)?;
        if label.is_null() {
            return fail(RotexStatus::NullPointer, "label is null");
        }
        let c = m.params.classes;
        if !probs.is_null() && probs_len < c {
            return fail(RotexStatus::BufferTooSmall, &format!("need {} values, got {}", c, probs_len));
        }
        let out = lib(m.network.predict(&[m.params.normalization.apply(&img)]))?;
        let scores = &out.scores[0];
        *label = out.predictions()[0];
        if !probs.is_null() {
            std::slice::from_raw_parts_mut(probs, c).copy_from_slice(&softmax(scores));
        }
        Ok(())
    })
}

/// Total cross power spectral density of `x` and `y`, with `y` zero-padded
/// to the size of `x`.
///
/// # Safety
/// `x` and `y` must hold `x_rows * x_cols` and `y_rows * y_cols` values.
#[no_mangle]
pub unsafe extern "C" fn rotex_cpsd(
    x: *const f64,
    x_rows: usize,
    x_cols: usize,
    y: *const f64,
    y_rows: usize,
    y_cols: usize,
    out: *mut f64,
) -> RotexStatus {
    guard(|| {
        let a = image(x, x_rows, x_cols)?;
        let b = image(y, y_rows, y_cols)?;
        if out.is_null() {
            return fail(RotexStatus::NullPointer, "out is null");
        }
        *out = lib(rotex::features::cpsd(&a, &b))?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rotex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rotex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
