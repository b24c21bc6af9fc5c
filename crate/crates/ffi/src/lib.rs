//! C interface to the twostream inference pipeline.
//!
//! Every function returns a [`TsStatus`]; on failure the message is available
//! from [`ts_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use twostream::config::RunConfig;
use twostream::mbrm::{refine_box, MbrmParams};
use twostream::model::checkpoint::{load_into_store, read_records};
use twostream::model::Network;
use twostream::numerics::ParamStore;
use twostream::pipeline::{infer, DetectionResult, InferConfig};
use twostream::{BBox, Error};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Version = 5,
    CheckpointMismatch = 6,
    Config = 7,
    OutOfRange = 8,
    Internal = 9,
}

/// Axis-aligned box in pixels: left, top, width, height.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// One detection; the mask is fetched separately with [`ts_results_mask`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsDetection {
    pub class_id: u32,
    pub score: f64,
    pub box_regressed: TsBox,
    pub box_refined: TsBox,
    pub mask_width: u32,
    pub mask_height: u32,
}

/// A loaded model with its inference and refinement settings.
pub struct TsModel {
    net: Network,
    store: ParamStore,
    mbrm: MbrmParams,
    infer: InferConfig,
}

/// Detections for one image.
pub struct TsResults {
    dets: Vec<DetectionResult>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::Io { .. } | Error::IncompleteDataset(_) => TsStatus::Io,
        Error::Format { .. } | Error::RleLength { .. } => TsStatus::Format,
        Error::Version { .. } => TsStatus::Version,
        Error::CheckpointMismatch(_) => TsStatus::CheckpointMismatch,
        Error::Config(_) => TsStatus::Config,
        _ => TsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (TsStatus, String)>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TsStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (TsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TsStatus, String) {
    (TsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (TsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn to_c(b: &BBox) -> TsBox {
    TsBox {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    }
}

fn from_c(b: &TsBox) -> BBox {
    BBox::new(b.x, b.y, b.w, b.h)
}

fn load(ckpt: &Path, config: Option<&Path>) -> twostream::Result<TsModel> {
    let sibling = ckpt.parent().map(|d| d.join("config.txt"));
    let cfg = match (config, sibling) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(p)) if p.exists() => RunConfig::from_file(&p)?,
        _ => RunConfig::default(),
    };
    cfg.validate()?;
    let mut store = ParamStore::new();
    let net = Network::new(cfg.model.clone(), &mut store, cfg.init_seed)?;
    let records = read_records(ckpt)?;
    load_into_store(&mut store, &records)?;
    let mbrm = MbrmParams::from_records(&records, cfg.mbrm_gamma)?
        .unwrap_or_else(|| MbrmParams::zeros(cfg.mbrm_scope, 0.0));
    Ok(TsModel {
        net,
        store,
        mbrm,
        infer: cfg.infer,
    })
}

/// Message of the last failed call on this thread (empty after a success).
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. `config_path` may be null, in which case `config.txt`
/// next to the checkpoint is used when present, else the defaults.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_load(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut TsModel,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt = path_arg(checkpoint_path, "checkpoint_path")?;
        let config = if config_path.is_null() {
            None
        } else {
            Some(path_arg(config_path, "config_path")?)
        };
        let model = load(&ckpt, config.as_deref()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ts_model_load`] (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_model_free(model: *mut TsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs detection and segmentation on an interleaved RGB image with values
/// in [0, 1] (`width·height·3` floats).
///
/// # Safety
/// `image` must point to `width·height·3` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_infer(
    model: *const TsModel,
    image: *const f32,
    width: u32,
    height: u32,
    out: *mut *mut TsResults,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if image.is_null() {
            return Err(null("image"));
        }
        let (w, h) = (width as usize, height as usize);
        let pixels = std::slice::from_raw_parts(image, w * h * 3);
        let dets = infer(&m.net, &m.store, pixels, w, h, &m.mbrm, &m.infer).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(TsResults { dets }));
        Ok(())
    })
}

/// Number of detections (0 for a null handle).
///
/// # Safety
/// `results` must come from [`ts_model_infer`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ts_results_len(results: *const TsResults) -> usize {
    results.as_ref().map_or(0, |r| r.dets.len())
}

/// Copies detection `index` into `out`.
///
/// # Safety
/// `results` must come from [`ts_model_infer`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_results_get(results: *const TsResults, index: usize, out: *mut TsDetection) -> TsStatus {
    guard(|| {
        let r = results.as_ref().ok_or_else(|| null("results"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let d = r
            .dets
            .get(index)
            .ok_or_else(|| (TsStatus::OutOfRange, format!("index {index} ≥ {}", r.dets.len())))?;
        *o = TsDetection {
            class_id: d.class_id as u32,
            score: d.score,
            box_regressed: to_c(&d.box_regressed),
            box_refined: to_c(&d.box_refined),
            mask_width: d.mask.width as u32,
            mask_height: d.mask.height as u32,
        };
        Ok(())
    })
}

/// Copies the row-major binary mask (0/1 bytes) of detection `index` into
/// `buf`, which must hold `mask_width·mask_height` bytes.
///
/// # Safety
/// `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ts_results_mask(results: *const TsResults, index: usize, buf: *mut u8, len: usize) -> TsStatus {
    guard(|| {
        let r = results.as_ref().ok_or_else(|| null("results"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let d = r
            .dets
            .get(index)
            .ok_or_else(|| (TsStatus::OutOfRange, format!("index {index} ≥ {}", r.dets.len())))?;
        let n = d.mask.data.len();
        if len < n {
            return Err((TsStatus::InvalidArgument, format!("buffer holds {len} bytes, mask needs {n}")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, n);
        for (o, &m) in dst.iter_mut().zip(&d.mask.data) {
            *o = (m != 0) as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `results` must come from [`ts_model_infer`] (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_results_free(results: *mut TsResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Refines a regressed box against a soft `height×width` mask (row-major).
/// `kernel` has `kernel_len = 2s+1` taps; `gamma = 0` returns the input box.
///
/// # Safety
/// `mask` must hold `width·height` floats, `kernel` `kernel_len` doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ts_refine_box(
    regressed: TsBox,
    mask: *const f32,
    width: u32,
    height: u32,
    kernel: *const f64,
    kernel_len: usize,
    bias: f64,
    gamma: f64,
    out: *mut TsBox,
) -> TsStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        if kernel.is_null() {
            return Err(null("kernel"));
        }
        let (w, h) = (width as usize, height as usize);
        let params = MbrmParams {
            kernel: std::slice::from_raw_parts(kernel, kernel_len).to_vec(),
            bias,
            gamma,
        };
        let m = std::slice::from_raw_parts(mask, w * h);
        let r = refine_box(&from_c(&regressed), m, w, h, &params).map_err(lib_err)?;
        *o = to_c(&r.bbox);
        Ok(())
    })
}
