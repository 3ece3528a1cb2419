//! C ABI over the `tradar` crate.
//!
//! Every fallible function returns a [`TradarStatus`]; on failure the
//! message is kept per thread and read with [`tradar_last_error`]. Strings
//! returned to the caller are freed with [`tradar_string_free`], handles
//! with their matching `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tradar::harness::{evaluate_checkpoint, load_model, Checkpoint, RunConfig};
use tradar::metrics::{evaluate_file, iou_3d, rotated_iou_bev, EvalConfig, ScoredBox};
use tradar::model::Model;
use tradar::scene::{Box3D, ClassId, PointCloud, PointSchema};
use tradar::synth::generate_dataset;
use tradar::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TradarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Parse = 4,
    Validation = 5,
    IncompatibleCheckpoint = 6,
    Config = 7,
    Io = 8,
    /// A panic was caught; the library state is still usable.
    Internal = 9,
}

/// Values of `TradarBox::class_id`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TradarClass {
    Car = 0,
    Pedestrian = 1,
    Cyclist = 2,
}

/// Center, size (length along heading, width, height) in meters; yaw in
/// radians about +z. `z` is the box center.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TradarBox {
    /// A `TradarClass` value.
    pub class_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TradarScoredBox {
    pub bbox: TradarBox,
    pub score: f64,
}

/// A trained model loaded from a checkpoint.
pub struct TradarModel {
    model: Model,
    schema: PointSchema,
}

/// Boxes from one prediction call.
pub struct TradarPredictions {
    boxes: Vec<TradarScoredBox>,
}

struct Failure(TradarStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NotFound(_) => TradarStatus::NotFound,
            Error::Parse { .. } | Error::Json(_) => TradarStatus::Parse,
            Error::InvalidInput(_) | Error::InvalidPredicate(_) => TradarStatus::InvalidArgument,
            Error::Validation(_) | Error::NonFiniteLoss { .. } | Error::GenerationRetryExhausted { .. } => {
                TradarStatus::Validation
            }
            Error::IncompatibleCheckpoint(_) => TradarStatus::IncompatibleCheckpoint,
            Error::Config(_) => TradarStatus::Config,
            Error::Io(_) => TradarStatus::Io,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TradarStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TradarStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TradarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TradarStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            TradarStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn class_of(c: ClassId) -> TradarClass {
    match c {
        ClassId::Car => TradarClass::Car,
        ClassId::Pedestrian => TradarClass::Pedestrian,
        ClassId::Cyclist => TradarClass::Cyclist,
    }
}

fn to_box(b: &TradarBox) -> Result<Box3D, Failure> {
    let class = ClassId::from_index(b.class_id as usize)
        .ok_or_else(|| invalid(format!("unknown class id {}", b.class_id)))?;
    Ok(Box3D::new(class, [b.x, b.y, b.z], [b.l, b.w, b.h], b.yaw)?)
}

fn from_scored(b: &ScoredBox) -> TradarScoredBox {
    let x = &b.bbox;
    TradarScoredBox {
        bbox: TradarBox {
            class_id: class_of(x.class) as u32,
            x: x.x,
            y: x.y,
            z: x.z,
            l: x.l,
            w: x.w,
            h: x.h,
            yaw: x.yaw,
        },
        score: b.score,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tradar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if the last
/// call succeeded. Free with `tradar_string_free`.
#[no_mangle]
pub extern "C" fn tradar_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tradar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact bird's-eye-view IoU of two rotated boxes.
///
/// # Safety
/// `a`, `b` and `out` must be NULL or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tradar_iou_bev(a: *const TradarBox, b: *const TradarBox, out: *mut f64) -> TradarStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        write_out(out, rotated_iou_bev(&to_box(a)?, &to_box(b)?), "out")
    })
}

/// Exact 3D IoU of two yaw-rotated boxes.
///
/// # Safety
/// `a`, `b` and `out` must be NULL or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tradar_iou_3d(a: *const TradarBox, b: *const TradarBox, out: *mut f64) -> TradarStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        write_out(out, iou_3d(&to_box(a)?, &to_box(b)?), "out")
    })
}

/// Write the training split of a synthetic dataset to `out_dir`.
/// `config_toml` is a run config in TOML (NULL for the defaults);
/// `scenes` overrides the scene count when nonzero.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `written` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn tradar_synth_generate(
    config_toml: *const c_char,
    out_dir: *const c_char,
    scenes: usize,
    written: *mut usize,
) -> TradarStatus {
    guard(|| {
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml_str(str_arg(config_toml, "config_toml")?, "<config_toml>".as_ref())?
        };
        let mut synth = cfg.synth_split(false);
        if scenes > 0 {
            synth.n_scenes = scenes;
        }
        let ids = generate_dataset(&synth, path_arg(out_dir, "out_dir")?)?;
        if !written.is_null() {
            written.write(ids.len());
        }
        Ok(())
    })
}

/// Score a JSON-lines prediction file against a dataset directory with the
/// default evaluation settings. The report is returned as JSON.
///
/// # Safety
/// String arguments must be NUL-terminated; `report_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tradar_evaluate_file(
    predictions: *const c_char,
    dataset: *const c_char,
    report_json: *mut *mut c_char,
) -> TradarStatus {
    guard(|| {
        let pred = path_arg(predictions, "predictions")?;
        let data = path_arg(dataset, "dataset")?;
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let report = evaluate_file(&pred, &data, &EvalConfig::default())?;
        let s = serde_json::to_string(&report).map_err(Error::from)?;
        report_json.write(to_c_string(s));
        Ok(())
    })
}

/// Run a checkpoint over every sample of a dataset directory using the
/// checkpoint's own evaluation settings. The report is returned as JSON.
///
/// # Safety
/// String arguments must be NUL-terminated; `report_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tradar_evaluate_checkpoint(
    checkpoint: *const c_char,
    dataset: *const c_char,
    report_json: *mut *mut c_char,
) -> TradarStatus {
    guard(|| {
        let ck = path_arg(checkpoint, "checkpoint")?;
        let data = path_arg(dataset, "dataset")?;
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let report = evaluate_checkpoint(&ck, &data, None, None, None)?;
        let s = serde_json::to_string(&report).map_err(Error::from)?;
        report_json.write(to_c_string(s));
        Ok(())
    })
}

/// Load a checkpoint. On success `*out` owns a model freed with
/// `tradar_model_free`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tradar_model_load(path: *const c_char, out: *mut *mut TradarModel) -> TradarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, meta): (Model, Checkpoint) = load_model(&path_arg(path, "path")?)?;
        let schema = if meta.config.data.sensor.is_lidar() {
            PointSchema::lidar()
        } else {
            PointSchema::radar()
        };
        out.write(Box::into_raw(Box::new(TradarModel { model, schema })));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from `tradar_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tradar_model_free(model: *mut TradarModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Floats per point the model expects: 7 for radar (x, y, z, rcs, v_r,
/// v_r_comp, t), 4 for LiDAR (x, y, z, intensity). 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tradar_model_point_fields(model: *const TradarModel) -> usize {
    model.as_ref().map_or(0, |m| m.schema.len())
}

/// Ground `prompt` in a point cloud of `n_points` rows, each
/// `tradar_model_point_fields` floats wide. On success `*out` owns the
/// predictions, freed with `tradar_predictions_free`.
///
/// # Safety
/// `points` must hold `n_points * fields` floats (may be NULL when
/// `n_points` is 0); `prompt` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tradar_model_predict(
    model: *const TradarModel,
    points: *const f32,
    n_points: usize,
    prompt: *const c_char,
    out: *mut *mut TradarPredictions,
) -> TradarStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_points
            .checked_mul(m.schema.len())
            .ok_or_else(|| invalid("n_points overflows"))?;
        let data = if len == 0 {
            Vec::new()
        } else if points.is_null() {
            return Err(null("points"));
        } else {
            std::slice::from_raw_parts(points, len).to_vec()
        };
        let cloud = PointCloud::new(m.schema.clone(), data)?;
        let input = m.model.prepare(&cloud, str_arg(prompt, "prompt")?)?;
        let boxes = m.model.predict(&input)?.iter().map(from_scored).collect();
        out.write(Box::into_raw(Box::new(TradarPredictions { boxes })));
        Ok(())
    })
}

/// Number of boxes, 0 for NULL.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tradar_predictions_len(p: *const TradarPredictions) -> usize {
    p.as_ref().map_or(0, |p| p.boxes.len())
}

/// Copy box `index` (highest score first) into `*out`.
///
/// # Safety
/// `p` must be NULL or a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tradar_predictions_get(
    p: *const TradarPredictions,
    index: usize,
    out: *mut TradarScoredBox,
) -> TradarStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("predictions"))?;
        let b = p
            .boxes
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} boxes", p.boxes.len())))?;
        write_out(out, *b, "out")
    })
}

/// # Safety
/// `p` must be NULL or a handle from `tradar_model_predict`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tradar_predictions_free(p: *mut TradarPredictions) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}
