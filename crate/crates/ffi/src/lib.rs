//! C ABI over the driveflow core: checkpoint loading, prediction, cloud
//! projection, and dataset generation behind opaque handles and error
//! codes. Every fallible call returns a [`DfStatus`]; the message for the
//! most recent failure on the current thread is available through
//! [`df_last_error_message`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};

use libc::c_char;

use driveflow_core::config::RunConfig;
use driveflow_core::data::{generate_dataset, load_cloud, load_image_ppm, resize_image};
use driveflow_core::error::Error;
use driveflow_core::models::{Model, ModelInput, ModelKind};
use driveflow_core::pointcloud::{
    depthmap_to_tensor, pcm_project, random_downsample, save_depthmap_pgm, PointCloud,
    ProjectionConfig,
};
use driveflow_core::tensor::Tensor;
use driveflow_core::training::Checkpoint;

/// Call outcome. Mirrors the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    /// Invalid arguments (null pointers, bad UTF-8, wrong model kind).
    Usage = 1,
    /// Unreadable or malformed files, shape mismatches.
    Data = 2,
    /// Non-finite values or other numeric failures.
    Numeric = 3,
}

/// Model family of a loaded checkpoint.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfModelKind {
    Io = 0,
    Pcm = 1,
    Pn = 2,
}

/// One prediction in every unit a caller might want.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfPrediction {
    pub angle_rad: f64,
    pub angle_deg: f64,
    pub speed_norm: f64,
    pub speed_kmh: f64,
}

/// Spherical projection parameters for `df_project_cloud_file`. Pass NULL
/// to use the defaults (90°×26.8°, 64×512, 120 m).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfProjection {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub height: u32,
    pub width: u32,
    pub max_range_m: f64,
}

/// Opaque handle to a loaded model.
pub struct DfModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn store_error(err: &Error) -> DfStatus {
    let status = match err.exit_code() {
        1 => DfStatus::Usage,
        3 => DfStatus::Numeric,
        _ => DfStatus::Data,
    };
    let msg = CString::new(err.to_string()).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
    status
}

fn store_usage(message: &str) -> DfStatus {
    let msg = CString::new(message).unwrap_or_else(|_| CString::new("usage error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
    DfStatus::Usage
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or NULL.
unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, DfStatus> {
    if ptr.is_null() {
        return Err(store_usage(&format!("{what} must not be NULL")));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(store_usage(&format!("{what} is not valid UTF-8"))),
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The caller owns the returned string and must release it with
/// `df_string_free`.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by `df_last_error_message`
/// (or NULL) that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn df_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file into a model handle. On success writes the
/// handle into `out`; release it with `df_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn df_model_load(path: *const c_char, out: *mut *mut DfModel) -> DfStatus {
    if out.is_null() {
        return store_usage("out must not be NULL");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match Checkpoint::load(&path) {
        Ok(ckpt) => {
            let handle = Box::new(DfModel {
                model: ckpt.to_model(),
            });
            *out = Box::into_raw(handle);
            DfStatus::Ok
        }
        Err(e) => store_error(&e),
    }
}

/// Releases a model handle.
///
/// # Safety
/// `model` must be a pointer previously returned by `df_model_load` (or
/// NULL) that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn df_model_free(model: *mut DfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model family of a loaded handle.
///
/// # Safety
/// `model` must be a live handle from `df_model_load`.
#[no_mangle]
pub unsafe extern "C" fn df_model_kind(model: *const DfModel) -> DfModelKind {
    match (*model).model.spec.kind {
        ModelKind::Io => DfModelKind::Io,
        ModelKind::Pcm => DfModelKind::Pcm,
        ModelKind::Pn => DfModelKind::Pn,
    }
}

fn predict_with(
    model: &Model,
    image: Tensor,
    cloud: Option<PointCloud>,
    seed: u64,
    out: &mut DfPrediction,
) -> DfStatus {
    let spec = &model.spec;
    let want = spec.image.in_shape;
    if image.shape()[0] != want[0] {
        return store_usage(&format!(
            "image has {} channels, model expects {}",
            image.shape()[0],
            want[0]
        ));
    }
    let image = match resize_image(&image, want[1], want[2]) {
        Ok(t) => t,
        Err(e) => return store_error(&e),
    };
    let mut depth = None;
    let mut cloud_tensor = None;
    match spec.kind {
        ModelKind::Io => {}
        ModelKind::Pcm => {
            let Some(cloud) = cloud else {
                return store_usage("pcm model requires a point cloud");
            };
            let proj = spec.pipeline.projection.unwrap_or_default();
            match pcm_project(&cloud, &proj) {
                Ok(dm) => depth = Some(depthmap_to_tensor(&dm, &proj)),
                Err(e) => return store_error(&e),
            }
        }
        ModelKind::Pn => {
            let Some(cloud) = cloud else {
                return store_usage("pn model requires a point cloud");
            };
            let fixed = match random_downsample(&cloud, spec.pipeline.num_points, seed) {
                Ok(c) => c,
                Err(e) => return store_error(&e),
            };
            match fixed.to_tensor(spec.pipeline.cloud_scale_m) {
                Ok(t) => cloud_tensor = Some(t),
                Err(e) => return store_error(&e),
            }
        }
    }
    match model.predict(&ModelInput {
        image,
        depth,
        cloud: cloud_tensor,
    }) {
        Ok(pred) => {
            out.angle_rad = pred.angle_rad;
            out.angle_deg = pred.angle_rad.to_degrees();
            out.speed_norm = pred.speed_norm;
            out.speed_kmh = pred.speed_norm * spec.pipeline.max_speed_kmh;
            DfStatus::Ok
        }
        Err(e) => store_error(&e),
    }
}

/// Runs one prediction from files: a binary PPM image and, for pcm/pn
/// models, a cloud file (ASCII or PCB1 binary; pass NULL for io models).
/// The image is bilinearly resized to the model's input size when it
/// differs. `seed` drives the pn branch's deterministic cloud
/// downsampling.
///
/// # Safety
/// Paths must be valid NUL-terminated strings (cloud_path may be NULL);
/// `out` must point to writable memory for one `DfPrediction`.
#[no_mangle]
pub unsafe extern "C" fn df_predict_files(
    model: *const DfModel,
    image_path: *const c_char,
    cloud_path: *const c_char,
    seed: u64,
    out: *mut DfPrediction,
) -> DfStatus {
    if model.is_null() || out.is_null() {
        return store_usage("model and out must not be NULL");
    }
    let image_path = match path_arg(image_path, "image_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let image = match load_image_ppm(&image_path) {
        Ok(t) => t,
        Err(e) => return store_error(&e),
    };
    let cloud = if cloud_path.is_null() {
        None
    } else {
        let p = match path_arg(cloud_path, "cloud_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_cloud(&p) {
            Ok(c) => Some(c),
            Err(e) => return store_error(&e),
        }
    };
    predict_with(&(*model).model, image, cloud, seed, &mut *out)
}

/// Runs one prediction from memory. `image` is channel-major C×H×W f64
/// data; `points` is an optional array of `num_points` xyz triples in
/// meters.
///
/// # Safety
/// `image` must point to `channels*height*width` f64 values; `points`,
/// when non-NULL, to `num_points*3` f64 values; `out` to one
/// `DfPrediction`.
#[no_mangle]
pub unsafe extern "C" fn df_predict_raw(
    model: *const DfModel,
    image: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    points: *const f64,
    num_points: usize,
    seed: u64,
    out: *mut DfPrediction,
) -> DfStatus {
    if model.is_null() || image.is_null() || out.is_null() {
        return store_usage("model, image, and out must not be NULL");
    }
    if channels == 0 || height == 0 || width == 0 {
        return store_usage("image dims must be positive");
    }
    let data = std::slice::from_raw_parts(image, channels * height * width).to_vec();
    let image = match Tensor::new(vec![channels, height, width], data) {
        Ok(t) => t,
        Err(e) => return store_error(&e),
    };
    let cloud = if points.is_null() || num_points == 0 {
        None
    } else {
        let flat = std::slice::from_raw_parts(points, num_points * 3);
        Some(PointCloud::new(
            flat.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        ))
    };
    predict_with(&(*model).model, image, cloud, seed, &mut *out)
}

/// Projects a cloud file to a 16-bit depth-map PGM. Pass NULL for `cfg`
/// to use the default projection.
///
/// # Safety
/// Paths must be valid NUL-terminated strings; `cfg` may be NULL or point
/// to one `DfProjection`.
#[no_mangle]
pub unsafe extern "C" fn df_project_cloud_file(
    cloud_path: *const c_char,
    cfg: *const DfProjection,
    out_pgm_path: *const c_char,
) -> DfStatus {
    let cloud_path = match path_arg(cloud_path, "cloud_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let out_path = match path_arg(out_pgm_path, "out_pgm_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let proj = if cfg.is_null() {
        ProjectionConfig::default()
    } else {
        let c = &*cfg;
        ProjectionConfig {
            h_fov_deg: c.h_fov_deg,
            v_fov_deg: c.v_fov_deg,
            height: c.height as usize,
            width: c.width as usize,
            max_range_m: c.max_range_m,
        }
    };
    let cloud = match load_cloud(&cloud_path) {
        Ok(c) => c,
        Err(e) => return store_error(&e),
    };
    match pcm_project(&cloud, &proj).and_then(|dm| save_depthmap_pgm(&dm, &proj, &out_path)) {
        Ok(()) => DfStatus::Ok,
        Err(e) => store_error(&e),
    }
}

/// Generates a synthetic dataset under `out_dir`, honoring an optional
/// config file (same format as the CLI's `--config`).
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string; `config_path` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn df_generate_dataset(
    config_path: *const c_char,
    out_dir: *const c_char,
    seed: u64,
) -> DfStatus {
    let out_dir = match path_arg(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let mut cfg = RunConfig::default();
    if !config_path.is_null() {
        let p = match path_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        if let Err(e) = cfg.apply_file(Path::new(&p)) {
            return store_error(&e);
        }
    }
    match generate_dataset(&cfg.scene, seed, &out_dir) {
        Ok(_) => DfStatus::Ok,
        Err(e) => store_error(&e),
    }
}
