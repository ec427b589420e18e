//! C ABI over the sightgrasp library.
//!
//! Objects cross the boundary as opaque handles created by `sg_*_new` /
//! `sg_*_load` and released with the matching `sg_*_free`. Every fallible
//! call returns an [`SgStatus`]; on failure the message is kept per thread
//! and read back with [`sg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sightgrasp::eyesim::{NearEyeObservation, Rig};
use sightgrasp::fuse::{gaze_filter, FuseError, FusionConfig, GraspDetector, NetworkDetector};
use sightgrasp::gaze::{estimate_gaze, GazeError};
use sightgrasp::geom::Pixel;
use sightgrasp::grasp::{is_success, jaccard, AngleFormula, GraspMaps, GraspRectangle};
use sightgrasp::graspnet::{init_params, ModelConfig};
use sightgrasp::pupil::{Ellipse, PupilDetector, PupilError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BlinkFrame = 4,
    IllConditioned = 5,
    GazeOutOfBounds = 6,
    DetectionFailed = 7,
    ModelError = 8,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(SgStatus, String);

impl Failure {
    fn new(status: SgStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

impl From<GazeError> for Failure {
    fn from(e: GazeError) -> Self {
        let status = match e {
            GazeError::BlinkFrame => SgStatus::BlinkFrame,
            GazeError::IllConditioned(_) => SgStatus::IllConditioned,
            _ => SgStatus::InvalidArgument,
        };
        Failure::new(status, e)
    }
}

impl From<FuseError> for Failure {
    fn from(e: FuseError) -> Self {
        let status = match e {
            FuseError::GazeOutOfBounds { .. } => SgStatus::GazeOutOfBounds,
            _ => SgStatus::InvalidArgument,
        };
        Failure::new(status, e)
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside sightgrasp");
            SgStatus::Panic
        }
    }
}

fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers obtained from this library or valid C objects.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(SgStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above, for a writable destination.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(SgStatus::NullPointer, format!("{what} is null")))
}

fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::new(SgStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null, caller promises a nul-terminated string.
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Failure::new(SgStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn into_handle<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    let out = out_ptr(out, "output handle")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(h: *mut T) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- plain data ----

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgPixel {
    pub u: f64,
    pub v: f64,
}

impl From<Pixel> for SgPixel {
    fn from(p: Pixel) -> Self {
        Self { u: p.u, v: p.v }
    }
}

impl From<SgPixel> for Pixel {
    fn from(p: SgPixel) -> Self {
        Pixel::new(p.u, p.v)
    }
}

/// Pupil ellipse: tilt is the major-axis direction in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgEllipse {
    pub center: SgPixel,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub tilt: f64,
}

impl From<Ellipse> for SgEllipse {
    fn from(e: Ellipse) -> Self {
        Self { center: e.center.into(), semi_major: e.semi_major, semi_minor: e.semi_minor, tilt: e.tilt }
    }
}

/// Features from one eye camera; `valid == false` marks a blink.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgEyeObservation {
    pub pupil: SgEllipse,
    pub glint: SgPixel,
    pub valid: bool,
}

impl From<SgEyeObservation> for NearEyeObservation {
    fn from(o: SgEyeObservation) -> Self {
        NearEyeObservation {
            pupil_ellipse: Ellipse::new(o.pupil.center.into(), o.pupil.semi_major, o.pupil.semi_minor, o.pupil.tilt),
            glint: o.glint.into(),
            valid: o.valid,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgGaze {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    /// Scene pixel; meaningful only when `in_scene`.
    pub scene_px: SgPixel,
    pub in_scene: bool,
    pub condition: f64,
}

/// Oriented grasp rectangle, angle in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgRect {
    pub center: SgPixel,
    pub theta: f64,
    pub width: f64,
    pub height: f64,
}

fn rect_from(r: &SgRect) -> Result<GraspRectangle, Failure> {
    GraspRectangle::new(r.center.into(), r.theta, r.width, r.height).map_err(|e| Failure::new(SgStatus::InvalidArgument, e))
}

impl From<GraspRectangle> for SgRect {
    fn from(r: GraspRectangle) -> Self {
        Self { center: r.center.into(), theta: r.theta, width: r.width, height: r.height }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgFusionConfig {
    pub sigma_g: f64,
    pub min_quality: f64,
    pub fixed_height: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgSelection {
    pub grasp: SgRect,
    pub score: f64,
    pub gaze: SgPixel,
    pub confident: bool,
}

/// Default fusion settings.
#[no_mangle]
pub extern "C" fn sg_fusion_config_default() -> SgFusionConfig {
    let d = FusionConfig::default();
    SgFusionConfig { sigma_g: d.sigma_g, min_quality: d.min_quality, fixed_height: d.fixed_height }
}

// ---- rig ----

/// Opaque camera rig.
pub struct SgRig {
    rig: Rig,
    pupil: PupilDetector,
}

impl SgRig {
    fn new(rig: Rig) -> Self {
        let pupil = PupilDetector::new(rig.pupil.clone());
        Self { rig, pupil }
    }
}

/// Built-in rig.
#[no_mangle]
pub extern "C" fn sg_rig_default(out: *mut *mut SgRig) -> SgStatus {
    guard(|| into_handle(SgRig::new(Rig::default()), out))
}

/// Rig from a JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_rig_load(path: *const c_char, out: *mut *mut SgRig) -> SgStatus {
    guard(|| {
        let rig = Rig::load(path_arg(path)?).map_err(|e| Failure::new(SgStatus::Io, format!("{e:#}")))?;
        into_handle(SgRig::new(rig), out)
    })
}

/// # Safety
/// `rig` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_rig_free(rig: *mut SgRig) {
    free_handle(rig)
}

/// Scene image size of a rig.
///
/// # Safety
/// `rig` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_rig_scene_size(rig: *const SgRig, width: *mut u32, height: *mut u32) -> SgStatus {
    guard(|| {
        let rig = nonnull(rig, "rig")?;
        *out_ptr(width, "width")? = rig.rig.scene_size.0;
        *out_ptr(height, "height")? = rig.rig.scene_size.1;
        Ok(())
    })
}

/// Pupil ellipse and glint from an 8-bit grayscale near-eye image.
/// `stride` is the byte distance between rows.
///
/// # Safety
/// `pixels` must hold `stride * height` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_detect_eye(
    rig: *const SgRig,
    pixels: *const u8,
    width: u32,
    height: u32,
    stride: u32,
    out: *mut SgEyeObservation,
) -> SgStatus {
    guard(|| {
        let rig = nonnull(rig, "rig")?;
        let out = out_ptr(out, "out")?;
        if pixels.is_null() {
            return Err(Failure::new(SgStatus::NullPointer, "pixels is null"));
        }
        if width == 0 || height == 0 || stride < width {
            return Err(Failure::new(SgStatus::InvalidArgument, "bad image dimensions"));
        }
        let src = std::slice::from_raw_parts(pixels, stride as usize * height as usize);
        let img = image::GrayImage::from_fn(width, height, |x, y| image::Luma([src[(y * stride + x) as usize]]));
        match rig.pupil.detect(&img) {
            Ok(f) => {
                let glint = f.glint.ok_or_else(|| Failure::new(SgStatus::DetectionFailed, PupilError::NoGlint))?;
                *out = SgEyeObservation { pupil: f.pupil.into(), glint: glint.into(), valid: true };
                Ok(())
            }
            Err(e @ PupilError::Blink { .. }) => {
                *out = SgEyeObservation { pupil: NearEyeObservation::blink().pupil_ellipse.into(), glint: SgPixel { u: 0.0, v: 0.0 }, valid: false };
                Err(Failure::new(SgStatus::BlinkFrame, e))
            }
            Err(e) => Err(Failure::new(SgStatus::DetectionFailed, e)),
        }
    })
}

/// Optical axis and scene gaze point from the two eye cameras' features.
///
/// # Safety
/// `obs` must point to two observations; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_estimate_gaze(rig: *const SgRig, obs: *const SgEyeObservation, out: *mut SgGaze) -> SgStatus {
    guard(|| {
        let rig = nonnull(rig, "rig")?;
        let out = out_ptr(out, "out")?;
        if obs.is_null() {
            return Err(Failure::new(SgStatus::NullPointer, "obs is null"));
        }
        let pair = std::slice::from_raw_parts(obs, 2);
        let est = estimate_gaze(&[pair[0].into(), pair[1].into()], &rig.rig)?;
        let o = est.axis.origin;
        let d = est.axis.dir;
        *out = SgGaze {
            origin: [o.x, o.y, o.z],
            direction: [d.x, d.y, d.z],
            scene_px: est.scene_px.unwrap_or(Pixel::new(f64::NAN, f64::NAN)).into(),
            in_scene: est.scene_px.is_some(),
            condition: est.condition,
        };
        Ok(())
    })
}

// ---- grasp maps ----

/// Opaque dense grasp maps.
pub struct SgMaps {
    maps: GraspMaps,
}

/// Maps from four row-major `width * height` arrays.
///
/// # Safety
/// Each array must hold `width * height` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_maps_new(
    width: u32,
    height: u32,
    quality: *const f64,
    cos2t: *const f64,
    sin2t: *const f64,
    grip_width: *const f64,
    out: *mut *mut SgMaps,
) -> SgStatus {
    guard(|| {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(Failure::new(SgStatus::InvalidArgument, "empty maps"));
        }
        let read = |p: *const f64, what: &str| -> Result<Vec<f64>, Failure> {
            if p.is_null() {
                return Err(Failure::new(SgStatus::NullPointer, format!("{what} is null")));
            }
            Ok(std::slice::from_raw_parts(p, n).to_vec())
        };
        let maps = GraspMaps {
            width: width as usize,
            height: height as usize,
            quality: read(quality, "quality")?,
            cos2t: read(cos2t, "cos2t")?,
            sin2t: read(sin2t, "sin2t")?,
            grip_width: read(grip_width, "grip_width")?,
        };
        into_handle(SgMaps { maps }, out)
    })
}

/// # Safety
/// `maps` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_maps_free(maps: *mut SgMaps) {
    free_handle(maps)
}

/// Map dimensions.
///
/// # Safety
/// `maps` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_maps_size(maps: *const SgMaps, width: *mut u32, height: *mut u32) -> SgStatus {
    guard(|| {
        let m = &nonnull(maps, "maps")?.maps;
        *out_ptr(width, "width")? = m.width as u32;
        *out_ptr(height, "height")? = m.height as u32;
        Ok(())
    })
}

/// Copies the quality map into `dst`, which holds `len` doubles.
///
/// # Safety
/// `dst` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_maps_copy_quality(maps: *const SgMaps, dst: *mut f64, len: usize) -> SgStatus {
    guard(|| {
        let m = &nonnull(maps, "maps")?.maps;
        if dst.is_null() {
            return Err(Failure::new(SgStatus::NullPointer, "dst is null"));
        }
        if len < m.quality.len() {
            return Err(Failure::new(SgStatus::InvalidArgument, format!("dst holds {len}, need {}", m.quality.len())));
        }
        ptr::copy_nonoverlapping(m.quality.as_ptr(), dst, m.quality.len());
        Ok(())
    })
}

/// Gaze-weighted grasp selection. `cfg` may be NULL for defaults.
///
/// # Safety
/// `maps` must be a live handle; `cfg` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_gaze_filter(
    maps: *const SgMaps,
    gaze: SgPixel,
    cfg: *const SgFusionConfig,
    out: *mut SgSelection,
) -> SgStatus {
    guard(|| {
        let m = &nonnull(maps, "maps")?.maps;
        let out = out_ptr(out, "out")?;
        let cfg = match cfg.as_ref() {
            Some(c) => FusionConfig {
                sigma_g: c.sigma_g,
                min_quality: c.min_quality,
                fixed_height: c.fixed_height,
                angle_formula: AngleFormula::HalfAtan2,
            },
            None => FusionConfig::default(),
        };
        let s = gaze_filter(m, gaze.into(), &cfg)?;
        *out = SgSelection { grasp: s.grasp.into(), score: s.score, gaze: s.gaze.into(), confident: s.confident };
        Ok(())
    })
}

// ---- model ----

/// Opaque grasp network.
pub struct SgModel {
    net: NetworkDetector,
}

/// Model from a file written by `sightgrasp graspnet init` or training.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_model_load(path: *const c_char, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let net = NetworkDetector::load(path_arg(path)?).map_err(|e| Failure::new(SgStatus::ModelError, e))?;
        into_handle(SgModel { net }, out)
    })
}

/// Freshly initialized toy-sized model (32×32 input).
#[no_mangle]
pub extern "C" fn sg_model_new_toy(seed: u64, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let cfg = ModelConfig { seed, ..ModelConfig::toy() };
        let params = init_params(&cfg).map_err(|e| Failure::new(SgStatus::ModelError, e))?;
        let net = NetworkDetector::new("toy", cfg, params).map_err(|e| Failure::new(SgStatus::ModelError, e))?;
        into_handle(SgModel { net }, out)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_model_free(model: *mut SgModel) {
    free_handle(model)
}

/// Side length of the square network input.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_model_input_size(model: *const SgModel) -> u32 {
    model.as_ref().map_or(0, |m| m.net.config.input_size as u32)
}

/// Grasp maps for a packed RGB8 image; the maps have the image's size.
///
/// # Safety
/// `rgb` must hold `width * height * 3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_model_predict(
    model: *const SgModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut *mut SgMaps,
) -> SgStatus {
    guard(|| {
        let net = &nonnull(model, "model")?.net;
        if rgb.is_null() {
            return Err(Failure::new(SgStatus::NullPointer, "rgb is null"));
        }
        if width == 0 || height == 0 {
            return Err(Failure::new(SgStatus::InvalidArgument, "empty image"));
        }
        let data = std::slice::from_raw_parts(rgb, width as usize * height as usize * 3).to_vec();
        let image = image::RgbImage::from_raw(width, height, data).expect("length checked");
        let frame = sightgrasp::eyesim::SceneFrame {
            image,
            truth_grasps: Vec::new(),
            working_plane: Rig::default().working_plane,
            gaze_truth: None,
        };
        let maps = net.detect(&frame).map_err(|e| Failure::new(SgStatus::ModelError, e))?;
        into_handle(SgMaps { maps }, out)
    })
}

// ---- metric ----

/// Intersection over union of two rectangles; negative on invalid input.
///
/// # Safety
/// `a` and `b` must be readable.
#[no_mangle]
pub unsafe extern "C" fn sg_jaccard(a: *const SgRect, b: *const SgRect) -> f64 {
    let run = || -> Result<f64, Failure> {
        let a = rect_from(nonnull(a, "a")?)?;
        let b = rect_from(nonnull(b, "b")?)?;
        Ok(jaccard(&a, &b))
    };
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(Ok(j)) => j,
        Ok(Err(Failure(_, msg))) => {
            set_error(msg);
            -1.0
        }
        Err(_) => {
            set_error("panic inside sightgrasp");
            -1.0
        }
    }
}

/// Whether `pred` matches any of `n` truth rectangles (angle within 30° and
/// Jaccard above 0.25).
///
/// # Safety
/// `truths` must hold `n` readable rectangles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_is_success(pred: *const SgRect, truths: *const SgRect, n: usize, out: *mut bool) -> SgStatus {
    guard(|| {
        let pred = rect_from(nonnull(pred, "pred")?)?;
        let out = out_ptr(out, "out")?;
        if truths.is_null() && n > 0 {
            return Err(Failure::new(SgStatus::NullPointer, "truths is null"));
        }
        let truths: Vec<GraspRectangle> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(truths, n).iter().map(rect_from).collect::<Result<_, _>>()?
        };
        *out = is_success(&pred, &truths).map_err(|e| Failure::new(SgStatus::InvalidArgument, e))?;
        Ok(())
    })
}
