//! C interface to the racdnn saliency engine.
//!
//! Models are opaque handles created by [`racdnn_model_load`] and released
//! with [`racdnn_model_free`]. Every fallible call returns a
//! [`RacdnnStatus`]; on failure [`racdnn_last_error`] describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use racdnn::cli::load_checked;
use racdnn::metrics::evaluate;
use racdnn::nn::ParamStore;
use racdnn::racdnn::{fit_image, initial_saliency, run_refinement, Preset};
use racdnn::tensor::Tensor;
use racdnn::Error;

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RacdnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Internal = 6,
}

/// A loaded checkpoint.
pub struct RacdnnModel {
    store: ParamStore,
    preset: Preset,
    iterations: usize,
    refined: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RacdnnStatus {
    match e {
        Error::Io { .. } => RacdnnStatus::Io,
        Error::Parse { .. } | Error::Checkpoint(_) => RacdnnStatus::Format,
        Error::Numeric(_) => RacdnnStatus::Numeric,
        _ => RacdnnStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RacdnnStatus, String)>) -> RacdnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RacdnnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RacdnnStatus::Internal
        }
    }
}

fn lift(e: Error) -> (RacdnnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RacdnnStatus, String) {
    (RacdnnStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn racdnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint from `path` (UTF-8, nul-terminated) into `*out`.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn racdnn_model_load(path: *const c_char, out: *mut *mut RacdnnModel) -> RacdnnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RacdnnStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let (ckpt, preset) = load_checked(Path::new(path)).map_err(lift)?;
        let model = RacdnnModel {
            refined: ckpt.store.contains_prefix("rec."),
            iterations: ckpt.config.iterations,
            store: ckpt.store,
            preset,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`racdnn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn racdnn_model_free(model: *mut RacdnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Non-zero when the model includes the refinement network.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn racdnn_model_is_refined(model: *const RacdnnModel) -> i32 {
    model.as_ref().is_some_and(|m| m.refined) as i32
}

/// Predicts a saliency map for an interleaved 8-bit RGB image of
/// `width × height` pixels. `out` receives `width × height` values in
/// [0, 1], row-major. `iterations` of 0 uses the checkpoint's setting; 1
/// skips refinement.
///
/// # Safety
/// `rgb` must hold `3·width·height` bytes and `out` `width·height` doubles.
#[no_mangle]
pub unsafe extern "C" fn racdnn_model_infer(
    model: *const RacdnnModel,
    rgb: *const u8,
    width: usize,
    height: usize,
    iterations: usize,
    out: *mut f64,
) -> RacdnnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = width.checked_mul(height).filter(|&n| n > 0).ok_or((
            RacdnnStatus::InvalidArgument,
            format!("invalid image size {width}x{height}"),
        ))?;
        let pixels = std::slice::from_raw_parts(rgb, 3 * n);
        let mut data = vec![0.0; 3 * n];
        for (i, &b) in pixels.iter().enumerate() {
            data[(i % 3) * n + i / 3] = f64::from(b) / 255.0;
        }
        let image = Tensor::from_vec(&[3, height, width], data).map_err(lift)?;
        let fitted = fit_image(&model.preset, &image).map_err(lift)?;
        let (r0, s0) = initial_saliency(&model.store, &model.preset, &fitted).map_err(lift)?;
        let iterations = if iterations == 0 { model.iterations } else { iterations };
        let map = if model.refined && iterations > 1 {
            run_refinement(&model.store, &model.preset, &fitted, &r0, iterations)
                .map_err(lift)?
                .0
        } else {
            s0
        };
        let map = racdnn::data::resize_bilinear(&map, height, width).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(map.data());
        Ok(())
    })
}

/// Maximum F-measure (β² = 0.3) and mean absolute error of a predicted map
/// in [0, 1] against a mask where non-zero bytes are salient.
///
/// # Safety
/// `pred` and `mask` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn racdnn_metrics(
    pred: *const f64,
    mask: *const u8,
    len: usize,
    max_f: *mut f64,
    mae: *mut f64,
) -> RacdnnStatus {
    guard(|| {
        if pred.is_null() || mask.is_null() || max_f.is_null() || mae.is_null() {
            return Err(null("argument"));
        }
        if len == 0 {
            return Err((RacdnnStatus::InvalidArgument, "empty map".into()));
        }
        let p = Tensor::from_vec(&[len], std::slice::from_raw_parts(pred, len).to_vec()).map_err(lift)?;
        let g: Vec<f64> = std::slice::from_raw_parts(mask, len)
            .iter()
            .map(|&b| f64::from(u8::from(b != 0)))
            .collect();
        let g = Tensor::from_vec(&[len], g).map_err(lift)?;
        let report = evaluate(&p, &g).map_err(lift)?;
        *max_f = report.max_f;
        *mae = report.mae;
        Ok(())
    })
}
