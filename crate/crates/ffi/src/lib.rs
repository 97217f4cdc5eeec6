//! C ABI over the surgecast core.
//!
//! Every fallible call returns a [`SurgecastStatus`]; on failure the message
//! is available from [`surgecast_last_error`] on the same thread. Objects
//! cross the boundary as opaque handles created by `*_new`/`*_load`/`*_build`
//! and released by the matching `*_free`. Array arguments are caller-owned,
//! row-major, and must hold at least the stated number of elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use surgecast::clips::{Clip, CONTEXT_LEN, HORIZON};
use surgecast::encode::{self, ChannelFrame, Colormap, Planes, ValueRange, FRAME_CHANNELS, RGB_CHANNELS};
use surgecast::forecast::forecast_clip;
use surgecast::ingest::{self, Mesh};
use surgecast::metrics::frame_scores;
use surgecast::nn::{load_checkpoint, Checkpoint};
use surgecast::raster::{self, RasterIndex, Roi};
use surgecast::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurgecastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Triangular mesh.
pub struct SurgecastMesh(Mesh);

/// Pixel-to-triangle lookup for one mesh and grid.
pub struct SurgecastRasterIndex(RasterIndex);

/// Trained forecaster loaded from a checkpoint.
pub struct SurgecastModel(Checkpoint);

/// Per-frame scores. `r2` is meaningful only when `r2_defined` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SurgecastScores {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub r2_defined: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SurgecastStatus {
    match e {
        Error::Io { .. } => SurgecastStatus::Io,
        Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => SurgecastStatus::Format,
        Error::NodeCountMismatch { .. } | Error::LengthMismatch { .. } | Error::Shape(_) => SurgecastStatus::Shape,
        Error::NonFinite(_) => SurgecastStatus::NonFinite,
        _ => SurgecastStatus::InvalidArgument,
    }
}

struct Failure(SurgecastStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SurgecastStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SurgecastStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SurgecastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SurgecastStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SurgecastStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the most recent failure on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn surgecast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn surgecast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Scales `value` into [0, 1] over `[lo, hi]`, clamping outside.
///
/// # Safety
/// `out` must be a valid pointer to one `double`.
#[no_mangle]
pub unsafe extern "C" fn surgecast_clamp_scale(value: f64, lo: f64, hi: f64, out: *mut f64) -> SurgecastStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = encode::clamp_scale(value, ValueRange::new(lo, hi)?)?;
        Ok(())
    })
}

/// Encodes a normalized elevation `u` in [0, 1] as RGB with the built-in
/// colormap.
///
/// # Safety
/// `rgb_out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn surgecast_rgb_encode(u: f64, rgb_out: *mut f64) -> SurgecastStatus {
    guard(|| {
        let out = slice_mut(rgb_out, 3, "rgb_out")?;
        out.copy_from_slice(&encode::rgb_encode(u, &Colormap::default())?);
        Ok(())
    })
}

/// Inverse of [`surgecast_rgb_encode`]: nearest colormap position for an
/// RGB triple.
///
/// # Safety
/// `rgb` must point to 3 doubles and `u_out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn surgecast_rgb_decode(rgb: *const f64, u_out: *mut f64) -> SurgecastStatus {
    guard(|| {
        let rgb = slice(rgb, 3, "rgb")?;
        let out = out_ptr(u_out, "u_out")?;
        *out = encode::rgb_decode([rgb[0], rgb[1], rgb[2]], &Colormap::default());
        Ok(())
    })
}

/// Reads an ASCII grid file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn surgecast_mesh_load(path: *const c_char, out: *mut *mut SurgecastMesh) -> SurgecastStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mesh = ingest::load_mesh(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SurgecastMesh(mesh)));
        Ok(())
    })
}

/// Builds a mesh from node arrays (`n_nodes` each) and `3 * n_triangles`
/// zero-based node indices.
///
/// # Safety
/// All arrays must hold the stated number of elements; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn surgecast_mesh_new(
    n_nodes: usize,
    lon: *const f64,
    lat: *const f64,
    depth: *const f64,
    n_triangles: usize,
    triangles: *const u32,
    out: *mut *mut SurgecastMesh,
) -> SurgecastStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let lon = slice(lon, n_nodes, "lon")?.to_vec();
        let lat = slice(lat, n_nodes, "lat")?.to_vec();
        let depth = slice(depth, n_nodes, "depth")?.to_vec();
        let tris = slice(triangles, 3 * n_triangles, "triangles")?
            .chunks_exact(3)
            .map(|t| [t[0] as usize, t[1] as usize, t[2] as usize])
            .collect();
        let mesh = Mesh::new("ffi", lon, lat, depth, tris)?;
        *out = Box::into_raw(Box::new(SurgecastMesh(mesh)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn surgecast_mesh_free(mesh: *mut SurgecastMesh) {
    free_handle(mesh);
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn surgecast_mesh_node_count(mesh: *const SurgecastMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.node_count())
}

/// Precomputes the covering triangle and weights of every pixel center of a
/// `width x height` grid over the given bounds.
///
/// # Safety
/// `mesh` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn surgecast_raster_index_build(
    mesh: *const SurgecastMesh,
    lon_min: f64,
    lon_max: f64,
    lat_min: f64,
    lat_max: f64,
    width: usize,
    height: usize,
    out: *mut *mut SurgecastRasterIndex,
) -> SurgecastStatus {
    guard(|| {
        let mesh = mesh.as_ref().ok_or_else(|| null("mesh"))?;
        let out = out_ptr(out, "out")?;
        let roi = Roi::new(lon_min, lon_max, lat_min, lat_max, width, height)?;
        let index = raster::build_index(&mesh.0, &roi)?;
        *out = Box::into_raw(Box::new(SurgecastRasterIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn surgecast_raster_index_free(index: *mut SurgecastRasterIndex) {
    free_handle(index);
}

/// Interpolates `n_values` nodal values onto the index's grid. Writes
/// `n_pixels` values and mask bytes (1 = covered and wet); uncovered or dry
/// pixels get `background`. Nodes equal to `fill_value` are dry.
///
/// # Safety
/// Arrays must hold the stated counts; `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn surgecast_rasterize(
    index: *const SurgecastRasterIndex,
    values: *const f64,
    n_values: usize,
    fill_value: f64,
    background: f64,
    values_out: *mut f64,
    mask_out: *mut u8,
    n_pixels: usize,
) -> SurgecastStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let values = slice(values, n_values, "values")?;
        let grid = raster::rasterize(&index.0, values, fill_value, background)?;
        if n_pixels != grid.values.len() {
            return Err(Failure(
                SurgecastStatus::Shape,
                format!("grid has {} pixels, output buffers {n_pixels}", grid.values.len()),
            ));
        }
        slice_mut(values_out, n_pixels, "values_out")?.copy_from_slice(&grid.values);
        let mask = slice_mut(mask_out, n_pixels, "mask_out")?;
        for (m, &g) in mask.iter_mut().zip(&grid.mask) {
            *m = g as u8;
        }
        Ok(())
    })
}

/// Loads a trained model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn surgecast_model_load(path: *const c_char, out: *mut *mut SurgecastModel) -> SurgecastStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ckpt = load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SurgecastModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn surgecast_model_free(model: *mut SurgecastModel) {
    free_handle(model);
}

/// Number of context frames a forecast consumes.
#[no_mangle]
pub extern "C" fn surgecast_context_len() -> usize {
    CONTEXT_LEN
}

/// Number of frames a forecast produces.
#[no_mangle]
pub extern "C" fn surgecast_horizon() -> usize {
    HORIZON
}

/// Autoregressive forecast of one clip.
///
/// * `context`: `context_len` frames of 6 channels x H x W in [0, 1]
///   (zeta RGB, windx, windy, depth).
/// * `future_wind`: `horizon` frames of 2 channels x H x W.
/// * `bathymetry`: H x W.
/// * `rgb_out`: receives `horizon` frames of 3 channels x H x W.
///
/// # Safety
/// Arrays must hold the stated counts; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn surgecast_forecast(
    model: *const SurgecastModel,
    context: *const f32,
    future_wind: *const f32,
    bathymetry: *const f32,
    height: usize,
    width: usize,
    rgb_out: *mut f32,
) -> SurgecastStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if height == 0 || width == 0 {
            return Err(invalid("grid must be non-empty"));
        }
        let px = height * width;
        let context = slice(context, CONTEXT_LEN * FRAME_CHANNELS * px, "context")?;
        let wind = slice(future_wind, HORIZON * 2 * px, "future_wind")?;
        let bathy = slice(bathymetry, px, "bathymetry")?;
        let out = slice_mut(rgb_out, HORIZON * RGB_CHANNELS * px, "rgb_out")?;

        let context = context
            .chunks_exact(FRAME_CHANNELS * px)
            .map(|f| ChannelFrame::new(Planes::new(FRAME_CHANNELS, height, width, f.to_vec())?))
            .collect::<Result<Vec<_>, _>>()?;
        let future_wind = wind
            .chunks_exact(2 * px)
            .map(|f| Planes::new(2, height, width, f.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let clip = Clip {
            storm_id: String::new(),
            region_id: String::new(),
            start_frame: 0,
            context,
            target: vec![Planes::zeros(RGB_CHANNELS, height, width); HORIZON],
            future_wind,
            bathymetry: Planes::new(1, height, width, bathy.to_vec())?,
        };
        clip.validate()?;
        let frames = forecast_clip(&model.0.model, &clip)?;
        for (dst, f) in out.chunks_exact_mut(RGB_CHANNELS * px).zip(&frames) {
            dst.copy_from_slice(&f.data);
        }
        Ok(())
    })
}

/// MSE, MAE, RMSE and R² of one predicted frame against the truth over all
/// `n` values.
///
/// # Safety
/// `pred` and `truth` must hold `n` floats; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn surgecast_frame_metrics(
    pred: *const f32,
    truth: *const f32,
    n: usize,
    out: *mut SurgecastScores,
) -> SurgecastStatus {
    guard(|| {
        let pred = slice(pred, n, "pred")?;
        let truth = slice(truth, n, "truth")?;
        let out = out_ptr(out, "out")?;
        let s = frame_scores(pred, truth)?;
        *out = SurgecastScores {
            mse: s.mse,
            mae: s.mae,
            rmse: s.rmse,
            r2: s.r2.unwrap_or(f64::NAN),
            r2_defined: s.r2.is_some() as u8,
        };
        Ok(())
    })
}
