//! C ABI over the weavecount library.
//!
//! Objects are opaque handles created by `wc_*` constructors and released by
//! the matching `*_free`. Every fallible call returns a `WcStatus`; on failure
//! `wc_last_error` copies a description of the most recent error on the
//! calling thread. Missing estimates are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use weavecount::canvasmap::{sweep, DensityMap, Method, Segmenter, SweepParams};
use weavecount::crossings::{binarize, extract_centroids, CentroidSet, ThresholdRule};
use weavecount::freqcount::{ft_density, FtParams};
use weavecount::imgproc::{load_image, GrayImage};
use weavecount::nn::io::load_weights;
use weavecount::nn::model::Network;
use weavecount::preprocess::{preprocess, PreprocessParams};
use weavecount::spatialcount::{estimate, ScParams};
use weavecount::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Decode = 4,
    MultiChannel = 5,
    MissingPpc = 6,
    InvalidParam = 7,
    OutOfBounds = 8,
    ShapeMismatch = 9,
    NoDynamicRange = 10,
    NoDominantFrequency = 11,
    TooFewPoints = 12,
    Empty = 13,
    Unassigned = 14,
    Format = 15,
    Panic = 16,
}

impl From<&Error> for WcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => WcStatus::Io,
            Error::Decode { .. } => WcStatus::Decode,
            Error::MultiChannel(_) => WcStatus::MultiChannel,
            Error::MissingPpc(_) => WcStatus::MissingPpc,
            Error::InvalidParam(_) => WcStatus::InvalidParam,
            Error::OutOfBounds(_) => WcStatus::OutOfBounds,
            Error::ShapeMismatch(_) => WcStatus::ShapeMismatch,
            Error::NoDynamicRange => WcStatus::NoDynamicRange,
            Error::NoDominantFrequency => WcStatus::NoDominantFrequency,
            Error::TooFewPoints(_) => WcStatus::TooFewPoints,
            Error::Empty(_) => WcStatus::Empty,
            Error::Unassigned(_) => WcStatus::Unassigned,
            Error::Format(_) => WcStatus::Format,
        }
    }
}

/// Grayscale image with its resolution.
pub struct WcImage(GrayImage);

/// Trained segmentation network.
pub struct WcNetwork(Network);

/// Crossing centroids in pixel coordinates.
pub struct WcCentroids(CentroidSet);

/// Grid of per-patch values from a canvas sweep.
pub struct WcDensityMap(DensityMap);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WcPreprocessParams {
    /// Local window side in pixels, odd.
    pub window: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub bins: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WcScParams {
    pub m: usize,
    pub alpha_deg: f64,
    pub q: f64,
}

/// Spatial count result; absent directions are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WcDensity {
    /// Crossings per cm walking along x.
    pub h_density: f64,
    /// Crossings per cm walking along y.
    pub v_density: f64,
    pub h_angle_dev: f64,
    pub v_angle_dev: f64,
    pub n_h: usize,
    pub n_v: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcThresholdRule {
    Fixed = 0,
    Otsu = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcMethod {
    Dlsc = 0,
    Dlfa = 1,
    Ft = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Fail {
    Null(&'static str),
    Utf8,
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            WcStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            WcStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("path is not valid UTF-8".into());
            WcStatus::InvalidUtf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            WcStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            WcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn wc_preprocess_defaults() -> WcPreprocessParams {
    let d = PreprocessParams::default();
    WcPreprocessParams {
        window: d.w,
        epsilon: d.epsilon,
        gamma: d.gamma,
        bins: d.bins,
    }
}

#[no_mangle]
pub extern "C" fn wc_sc_defaults() -> WcScParams {
    let d = ScParams::default();
    WcScParams {
        m: d.m,
        alpha_deg: d.alpha_deg,
        q: d.q,
    }
}

/// Loads a PGM or PNG. A `ppc` <= 0 reads the resolution from the sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wc_image_load(path: *const c_char, ppc: f64, out: *mut *mut WcImage) -> WcStatus {
    guard(|| {
        let path = path_arg(path)?;
        let img = load_image(&path, (ppc > 0.0).then_some(ppc))?;
        emit(out, WcImage(img))
    })
}

/// Image from `width * height` row-major samples.
///
/// # Safety
/// `data` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wc_image_new(
    width: usize,
    height: usize,
    ppc: f64,
    data: *const f64,
    out: *mut *mut WcImage,
) -> WcStatus {
    guard(|| {
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidParam("image too large".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        emit(out, WcImage(GrayImage::new(width, height, ppc, values)?))
    })
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_image_width(img: *const WcImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_image_height(img: *const WcImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_image_ppc(img: *const WcImage) -> f64 {
    img.as_ref().map_or(f64::NAN, |i| i.0.ppc())
}

/// Copies up to `len` samples into `buf`; returns the number of samples in the image.
///
/// # Safety
/// `img` must be a live handle; `buf` null or `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wc_image_copy(img: *const WcImage, buf: *mut f64, len: usize) -> usize {
    let Some(img) = img.as_ref() else { return 0 };
    let data = img.0.data();
    if !buf.is_null() {
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len().min(len));
    }
    data.len()
}

/// # Safety
/// `img` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_image_free(img: *mut WcImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` and `params` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_preprocess(
    img: *const WcImage,
    params: *const WcPreprocessParams,
    out: *mut *mut WcImage,
) -> WcStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        let p = borrow(params, "params")?;
        let pp = PreprocessParams {
            w: p.window,
            epsilon: p.epsilon,
            gamma: p.gamma,
            bins: p.bins,
        };
        emit(out, WcImage(preprocess(&img.0, &pp)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_network_load(path: *const c_char, out: *mut *mut WcNetwork) -> WcStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, WcNetwork(Network::from_weights(&load_weights(&path)?)?))
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_network_free(net: *mut WcNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Crossing probability map of a preprocessed image.
///
/// # Safety
/// `net` and `img` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_network_predict(
    net: *const WcNetwork,
    img: *const WcImage,
    out: *mut *mut WcImage,
) -> WcStatus {
    guard(|| {
        let net = borrow(net, "net")?;
        let img = borrow(img, "img")?;
        emit(out, WcImage(net.0.predict(&img.0)?))
    })
}

/// Thresholds a probability map and returns component centroids.
///
/// # Safety
/// `prob` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_extract_centroids(
    prob: *const WcImage,
    rule: WcThresholdRule,
    min_area: usize,
    out: *mut *mut WcCentroids,
) -> WcStatus {
    guard(|| {
        let prob = borrow(prob, "prob")?;
        let rule = match rule {
            WcThresholdRule::Fixed => ThresholdRule::Fixed,
            WcThresholdRule::Otsu => ThresholdRule::Otsu,
        };
        let mask = binarize(&prob.0, rule);
        emit(out, WcCentroids(extract_centroids(&mask, min_area, prob.0.ppc())))
    })
}

/// Centroid set from `n` coordinate pairs.
///
/// # Safety
/// `xs` and `ys` must point to `n` doubles each; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_centroids_new(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    width: usize,
    height: usize,
    ppc: f64,
    out: *mut *mut WcCentroids,
) -> WcStatus {
    guard(|| {
        if n > 0 && (xs.is_null() || ys.is_null()) {
            return Err(Fail::Null("coordinates"));
        }
        let pts = if n == 0 {
            Vec::new()
        } else {
            let xs = std::slice::from_raw_parts(xs, n);
            let ys = std::slice::from_raw_parts(ys, n);
            xs.iter().copied().zip(ys.iter().copied()).collect()
        };
        emit(out, WcCentroids(CentroidSet::new(pts, width, height, ppc)))
    })
}

/// # Safety
/// `c` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_centroids_len(c: *const WcCentroids) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Copies centroid `i` into `x`, `y`.
///
/// # Safety
/// `c` must be a live handle; `x` and `y` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_centroids_get(c: *const WcCentroids, i: usize, x: *mut f64, y: *mut f64) -> WcStatus {
    guard(|| {
        let c = borrow(c, "centroids")?;
        if x.is_null() || y.is_null() {
            return Err(Fail::Null("x/y"));
        }
        let &(px, py) =
            c.0.points
                .get(i)
                .ok_or_else(|| Error::OutOfBounds(format!("centroid {i} of {}", c.0.len())))?;
        *x = px;
        *y = py;
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_centroids_free(c: *mut WcCentroids) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Nearest-neighbor thread count of a centroid set at the set's resolution.
///
/// # Safety
/// `c` and `params` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_spatial_count(
    c: *const WcCentroids,
    params: *const WcScParams,
    out: *mut WcDensity,
) -> WcStatus {
    guard(|| {
        let c = borrow(c, "centroids")?;
        let p = borrow(params, "params")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let sc = ScParams {
            m: p.m,
            alpha_deg: p.alpha_deg,
            q: p.q,
            ppc: c.0.ppc,
        };
        let e = estimate(&c.0, &sc)?;
        *out = WcDensity {
            h_density: nan(e.h_density),
            v_density: nan(e.v_density),
            h_angle_dev: nan(e.h_angle_dev),
            v_angle_dev: nan(e.v_angle_dev),
            n_h: e.n_h,
            n_v: e.n_v,
        };
        Ok(())
    })
}

/// Fourier thread count of a square patch with default settings.
///
/// # Safety
/// `img` must be a live handle; `h` and `v` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_ft_density(img: *const WcImage, h: *mut f64, v: *mut f64) -> WcStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        if h.is_null() || v.is_null() {
            return Err(Fail::Null("h/v"));
        }
        let e = ft_density(&img.0, &FtParams::default())?;
        *h = nan(e.h);
        *v = nan(e.v);
        Ok(())
    })
}

/// Sweeps a preprocessed canvas with 200 px patches every `shift` pixels.
/// `net` may be null for `WcMethod::Ft`.
///
/// # Safety
/// `canvas` must be a live handle, `net` a live handle or null; `out_h`, `out_v` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_sweep(
    canvas: *const WcImage,
    method: WcMethod,
    shift: usize,
    net: *const WcNetwork,
    out_h: *mut *mut WcDensityMap,
    out_v: *mut *mut WcDensityMap,
) -> WcStatus {
    guard(|| {
        let canvas = borrow(canvas, "canvas")?;
        if out_h.is_null() || out_v.is_null() {
            return Err(Fail::Null("out"));
        }
        let method = match method {
            WcMethod::Dlsc => Method::Dlsc,
            WcMethod::Dlfa => Method::Dlfa,
            WcMethod::Ft => Method::Ft,
        };
        let p = SweepParams {
            method,
            shift,
            sc: ScParams {
                ppc: canvas.0.ppc(),
                ..ScParams::default()
            },
            ..SweepParams::default()
        };
        let seg = net.as_ref().map(|n| &n.0 as &dyn Segmenter);
        let maps = sweep(&canvas.0, &p, seg)?;
        emit(out_h, WcDensityMap(maps.h))?;
        emit(out_v, WcDensityMap(maps.v))
    })
}

/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_map_rows(map: *const WcDensityMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.rows)
}

/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_map_cols(map: *const WcDensityMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.cols)
}

/// Cell value, NaN when missing or out of range.
///
/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_map_get(map: *const WcDensityMap, row: usize, col: usize) -> f64 {
    match map.as_ref() {
        Some(m) if row < m.0.rows && col < m.0.cols => nan(m.0.get(row, col)),
        _ => f64::NAN,
    }
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_map_free(map: *mut WcDensityMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}
