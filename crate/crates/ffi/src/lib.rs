//! C ABI over the skeleton filter, pose feature builders, depth estimators
//! and the gesture classifier.
//!
//! Conventions:
//! - every fallible call returns a [`StadnetStatus`]; details of the last
//!   failure on the calling thread are available from
//!   [`stadnet_last_error_message`];
//! - points are passed as interleaved `x, y` doubles and a missing point is
//!   `NaN` in either coordinate;
//! - handles are opaque, created by a `*_new` or `*_load` call and released
//!   with the matching `*_free`, which accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stadnet::depth::DepthNet;
use stadnet::features::{augment_hand, augment_pose};
use stadnet::filter::{FilterParams, SkeletonFilter};
use stadnet::gesture::{predict, GestureModel};
use stadnet::model::{KeypointFrame, Point2, Slot, POINTS_PER_FRAME};
use stadnet::sequence::{GestureSequence, SEQ_LEN};
use stadnet::Error;

pub const STADNET_BODY_JOINTS: usize = 8;
pub const STADNET_HAND_KEYPOINTS: usize = 21;
pub const STADNET_POINTS_PER_FRAME: usize = 50;
pub const STADNET_BODY_POSE_DIM: usize = 97;
pub const STADNET_HAND_POSE_DIM: usize = 54;
pub const STADNET_HAND_POINTS: usize = 6;
pub const STADNET_SEQ_LEN: usize = 40;

const _: () = assert!(STADNET_POINTS_PER_FRAME == POINTS_PER_FRAME && STADNET_SEQ_LEN == SEQ_LEN);
const _: () = assert!(STADNET_BODY_POSE_DIM == stadnet::features::BODY_POSE_DIM);
const _: () = assert!(STADNET_HAND_POSE_DIM == stadnet::features::HAND_POSE_DIM);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StadnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Corrupt = 6,
    Degenerate = 7,
    Internal = 8,
}

/// Sliding-window skeleton filter.
pub struct StadnetFilter {
    inner: SkeletonFilter,
}

/// Trained depth estimator.
pub struct StadnetDepthNet {
    inner: DepthNet,
}

/// Trained gesture classifier with its standardization statistics.
pub struct StadnetGestureModel {
    inner: GestureModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> StadnetStatus {
    match e {
        Error::Io { .. } => StadnetStatus::Io,
        Error::Parse { .. } | Error::Json(_) => StadnetStatus::Parse,
        Error::Corrupt(_) | Error::UnsupportedVersion { .. } => StadnetStatus::Corrupt,
        Error::DimensionMismatch { .. } => StadnetStatus::DimensionMismatch,
        Error::Degenerate(_) | Error::MissingRoot => StadnetStatus::Degenerate,
        _ => StadnetStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (StadnetStatus, String)>) -> StadnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StadnetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            StadnetStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (StadnetStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StadnetStatus, String) {
    (StadnetStatus::NullPointer, format!("{what} is null"))
}

fn read_points<const N: usize>(xy: *const f64) -> Result<[Slot; N], (StadnetStatus, String)> {
    if xy.is_null() {
        return Err(null("points"));
    }
    // SAFETY: the caller provides 2 * N readable doubles.
    let v = unsafe { std::slice::from_raw_parts(xy, 2 * N) };
    Ok(std::array::from_fn(|i| {
        let p = Point2::new(v[2 * i], v[2 * i + 1]);
        p.is_finite().then_some(p)
    }))
}

fn c_path(path: *const c_char) -> Result<String, (StadnetStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    // SAFETY: the caller provides a NUL-terminated string.
    unsafe { CStr::from_ptr(path) }
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (StadnetStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Message describing the last failure on this thread; empty when none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stadnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stadnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a filter. `sigma <= 0` selects window / 4.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn stadnet_filter_new(window: usize, rbar: u32, sigma: f64, out: *mut *mut StadnetFilter) -> StadnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = FilterParams {
            window,
            rbar,
            sigma: (sigma > 0.0).then_some(sigma),
        };
        let inner = SkeletonFilter::new(params).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StadnetFilter { inner }));
        Ok(())
    })
}

/// Pushes one frame of 50 points (8 body joints, 21 left-hand and 21
/// right-hand keypoints) as 100 doubles. Once the window is full, writes the
/// filtered center frame to `out_xy` (100 doubles, NaN for missing) and its
/// frame index to `out_index`, and sets `out_ready` to 1; otherwise sets it
/// to 0 and leaves the outputs untouched.
///
/// # Safety
/// `filter` must come from [`stadnet_filter_new`]; `xy` and `out_xy` must hold
/// 100 doubles; `out_index` and `out_ready` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stadnet_filter_push(
    filter: *mut StadnetFilter,
    frame_index: u64,
    fps: f64,
    xy: *const f64,
    out_xy: *mut f64,
    out_index: *mut u64,
    out_ready: *mut u8,
) -> StadnetStatus {
    guard(|| {
        let f = filter.as_mut().ok_or_else(|| null("filter"))?;
        if out_xy.is_null() || out_index.is_null() || out_ready.is_null() {
            return Err(null("output"));
        }
        let pts = read_points::<POINTS_PER_FRAME>(xy)?;
        let mut frame = KeypointFrame::empty(frame_index, fps);
        for (i, p) in pts.into_iter().enumerate() {
            *frame.point_mut(i) = p;
        }
        *out_ready = 0;
        if let Some(done) = f.inner.push_frame(frame) {
            let out = std::slice::from_raw_parts_mut(out_xy, 2 * POINTS_PER_FRAME);
            for i in 0..POINTS_PER_FRAME {
                let p = done.point(i).unwrap_or(Point2::new(f64::NAN, f64::NAN));
                out[2 * i] = p.x;
                out[2 * i + 1] = p.y;
            }
            *out_index = done.frame_index;
            *out_ready = 1;
        }
        Ok(())
    })
}

/// # Safety
/// `filter` must come from [`stadnet_filter_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_filter_free(filter: *mut StadnetFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

unsafe fn write_vector(values: &[f64], mask: &[bool], out: *mut f64, out_mask: *mut u8) {
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    if !out_mask.is_null() {
        for (i, &m) in mask.iter().enumerate() {
            *out_mask.add(i) = m as u8;
        }
    }
}

/// Builds the 97-value body vector from 8 joints (16 doubles).
/// `out_mask` may be null; otherwise receives 97 validity flags.
///
/// # Safety
/// `joints_xy` must hold 16 doubles and `out` 97; `out_mask`, when not null, 97 bytes.
#[no_mangle]
pub unsafe extern "C" fn stadnet_augment_pose(joints_xy: *const f64, out: *mut f64, out_mask: *mut u8) -> StadnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let joints = read_points::<STADNET_BODY_JOINTS>(joints_xy)?;
        let p = augment_pose(&joints).map_err(lib_err)?;
        write_vector(&p.values, &p.mask, out, out_mask);
        Ok(())
    })
}

/// Builds the 54-value hand vector from the 6 chain points (shoulder,
/// elbow, wrist, palm base, middle-finger base, middle-finger tip).
///
/// # Safety
/// `points_xy` must hold 12 doubles and `out` 54; `out_mask`, when not null, 54 bytes.
#[no_mangle]
pub unsafe extern "C" fn stadnet_augment_hand(points_xy: *const f64, out: *mut f64, out_mask: *mut u8) -> StadnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let points = read_points::<STADNET_HAND_POINTS>(points_xy)?;
        let p = augment_hand(&points).map_err(lib_err)?;
        write_vector(&p.values, &p.mask, out, out_mask);
        Ok(())
    })
}

/// Loads a depth estimator saved by the `train-depth` command.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stadnet_depth_load(path: *const c_char, out: *mut *mut StadnetDepthNet) -> StadnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = DepthNet::load(c_path(path)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StadnetDepthNet { inner }));
        Ok(())
    })
}

/// Input width (97 for the neck estimator, 54 for hands); 0 for null.
///
/// # Safety
/// `net` must come from [`stadnet_depth_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_depth_input_dim(net: *const StadnetDepthNet) -> usize {
    net.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// # Safety
/// `x` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stadnet_depth_forward(net: *const StadnetDepthNet, x: *const f64, len: usize, out: *mut f64) -> StadnetStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        if x.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let xs = std::slice::from_raw_parts(x, len);
        *out = n.inner.forward(xs).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`stadnet_depth_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_depth_free(net: *mut StadnetDepthNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Loads a classifier saved by the `train` command.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stadnet_gesture_load(path: *const c_char, out: *mut *mut StadnetGestureModel) -> StadnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = GestureModel::load(c_path(path)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StadnetGestureModel { inner }));
        Ok(())
    })
}

/// Number of output classes; 0 for null.
///
/// # Safety
/// `model` must come from [`stadnet_gesture_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_gesture_classes(model: *const StadnetGestureModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.net.classes())
}

/// Per-frame feature width; 0 for null.
///
/// # Safety
/// `model` must come from [`stadnet_gesture_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_gesture_input_dim(model: *const StadnetGestureModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.net.config.input_dim())
}

/// Classifies one 40-frame sequence. `data` holds `40 * dim` floats,
/// row-major; `mask[t]` is 1 for padding frames. When `standardize` is
/// nonzero the model's statistics are applied to the non-padding frames
/// first. Ties resolve to the lowest class id. `out_probs` may be null;
/// otherwise it receives one probability per class.
///
/// # Safety
/// Buffers must have the sizes stated above; `out_label` and
/// `out_probability` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stadnet_gesture_predict(
    model: *const StadnetGestureModel,
    data: *const f32,
    mask: *const u8,
    dim: usize,
    standardize: u8,
    out_label: *mut u32,
    out_probability: *mut f64,
    out_probs: *mut f64,
) -> StadnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if data.is_null() || mask.is_null() || out_label.is_null() || out_probability.is_null() {
            return Err(null("buffer"));
        }
        let net = &m.inner.net;
        if dim != net.config.input_dim() {
            return Err(lib_err(Error::DimensionMismatch {
                expected: net.config.input_dim(),
                got: dim,
            }));
        }
        let mut values = std::slice::from_raw_parts(data, SEQ_LEN * dim).to_vec();
        let mask: Vec<bool> = std::slice::from_raw_parts(mask, SEQ_LEN).iter().map(|&b| b != 0).collect();
        if standardize != 0 {
            let stats = m
                .inner
                .stats
                .as_ref()
                .ok_or((StadnetStatus::InvalidArgument, "model carries no standardization statistics".into()))?;
            for t in (0..SEQ_LEN).filter(|&t| !mask[t]) {
                stats.apply_f32(&mut values[t * dim..(t + 1) * dim]).map_err(lib_err)?;
            }
        }
        let seq = GestureSequence {
            source_id: String::new(),
            label: None,
            embed_dim: net.config.embed_dim,
            dim,
            data: values,
            mask,
            stats_id: None,
        };
        let p = predict(net, &seq).map_err(lib_err)?;
        *out_label = p.label as u32;
        *out_probability = p.probability;
        if !out_probs.is_null() {
            ptr::copy_nonoverlapping(p.probabilities.as_ptr(), out_probs, p.probabilities.len());
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`stadnet_gesture_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stadnet_gesture_free(model: *mut StadnetGestureModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
