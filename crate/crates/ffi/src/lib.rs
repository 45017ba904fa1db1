//! C ABI over `gvof-core`.
//!
//! Volumes are opaque `GvofVolume` handles created by the library and
//! released with `gvof_volume_free`. Every fallible call returns a
//! `GvofStatus`; on failure `gvof_last_error_message` describes the error
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gvof_core::filters::{
    apply_filter, BilateralParams, FilterConfig, GaussianParams, GvofParams, NdfParams,
};
use gvof_core::metrics::{self, EdgeSpec};
use gvof_core::phantom::{rasterize_phantom, simulate_acquisition, AcquisitionModel, Contrast};
use gvof_core::study::StudyConfig;
use gvof_core::volume::{dilate_mask, erode_mask_2d, sphere_mask, Axis};
use gvof_core::{Error, Geometry, Volume};

/// Opaque volume handle.
pub struct GvofVolume {
    inner: Volume,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GvofStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyRegion = 4,
    Numeric = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GvofStatus {
    match e {
        Error::InvalidGeometry(_)
        | Error::InvalidParameter(_)
        | Error::IndexOutOfRange(_)
        | Error::OverlappingSpheres(..)
        | Error::ClearanceUnsatisfiable { .. }
        | Error::Config(_) => GvofStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => GvofStatus::DimensionMismatch,
        Error::EmptyMask | Error::SphereOutsideGrid | Error::SphereTooSmall => GvofStatus::EmptyRegion,
        Error::InfiniteSnr | Error::FitNonConvergence { .. } | Error::NoEdgePeak | Error::CountOverflow(_) => {
            GvofStatus::Numeric
        }
        Error::BadMagic { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFinitePayload { .. }
        | Error::BadHeader { .. } => GvofStatus::Format,
        Error::Io { .. } => GvofStatus::Io,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), (GvofStatus, String)>) -> GvofStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GvofStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GvofStatus::Panic
        }
    }
}

fn core(e: Error) -> (GvofStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GvofStatus, String) {
    (GvofStatus::NullPointer, format!("{what} is null"))
}

unsafe fn vol_ref<'a>(v: *const GvofVolume, what: &str) -> Result<&'a Volume, (GvofStatus, String)> {
    v.as_ref().map(|h| &h.inner).ok_or_else(|| null(what))
}

unsafe fn emit(out: *mut *mut GvofVolume, vol: Volume) -> Result<(), (GvofStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(GvofVolume { inner: vol }));
    Ok(())
}

unsafe fn put(out: *mut f64, v: f64) -> Result<(), (GvofStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = v;
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (GvofStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (GvofStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn triple(p: *const f64, what: &str) -> Result<[f64; 3], (GvofStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok([*p, *p.add(1), *p.add(2)])
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gvof_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gvof_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a volume of `nx * ny * nz` voxels, x fastest. `data` may be null
/// for an all-zero volume; otherwise it must hold `nx * ny * nz` values.
///
/// # Safety
/// `data` must be null or valid for the stated length; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
    data: *const f64,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    guard(|| {
        let g = Geometry::new([nx, ny, nz], [sx, sy, sz]).map_err(core)?;
        let values = if data.is_null() {
            vec![0.0; g.len()]
        } else {
            std::slice::from_raw_parts(data, g.len()).to_vec()
        };
        emit(out, Volume::new(g, values).map_err(core)?)
    })
}

/// Releases a volume. Null is ignored.
///
/// # Safety
/// `vol` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_free(vol: *mut GvofVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Writes dims and spacing into 3-element arrays; either may be null.
///
/// # Safety
/// Non-null pointers must be valid for three elements.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_dims(vol: *const GvofVolume, dims: *mut usize, spacing: *mut f64) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        for a in 0..3 {
            if !dims.is_null() {
                *dims.add(a) = v.dims()[a];
            }
            if !spacing.is_null() {
                *spacing.add(a) = v.spacing()[a];
            }
        }
        Ok(())
    })
}

/// Copies the voxel values into `out`, which must hold exactly `len` values.
///
/// # Safety
/// `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_copy_data(vol: *const GvofVolume, out: *mut f64, len: usize) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != v.data().len() {
            return Err((
                GvofStatus::DimensionMismatch,
                format!("buffer holds {len} values, volume has {}", v.data().len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.data());
        Ok(())
    })
}

/// Reads a volume from its header path.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_read(path: *const c_char, out: *mut *mut GvofVolume) -> GvofStatus {
    guard(|| {
        let p = path_arg(path)?;
        emit(out, gvof_core::io::read_volume(p).map_err(core)?)
    })
}

/// Writes a volume (header plus `.raw` payload).
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gvof_volume_write(vol: *const GvofVolume, path: *const c_char) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let p = path_arg(path)?;
        gvof_core::io::write_volume(v, p).map_err(core)
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GvofGaussianParams {
    pub fwhm: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GvofBilateralParams {
    pub spatial_fwhm: f64,
    pub intensity_width: f64,
    pub radius: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GvofNdfParams {
    pub kappa: f64,
    pub iterations: usize,
    pub dt: f64,
    pub smooth_fwhm: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GvofGvofParams {
    pub kappa: f64,
    pub iterations: usize,
    pub smooth_fwhm: f64,
    pub window_x: usize,
    pub window_y: usize,
    pub dt: f64,
    /// Relative L1 change that stops iteration early; `<= 0` disables it.
    pub convergence_tol: f64,
}

impl From<GaussianParams> for GvofGaussianParams {
    fn from(p: GaussianParams) -> Self {
        Self { fwhm: p.fwhm }
    }
}

impl From<GvofGaussianParams> for GaussianParams {
    fn from(p: GvofGaussianParams) -> Self {
        Self { fwhm: p.fwhm }
    }
}

impl From<BilateralParams> for GvofBilateralParams {
    fn from(p: BilateralParams) -> Self {
        Self {
            spatial_fwhm: p.spatial_fwhm,
            intensity_width: p.intensity_width,
            radius: p.radius,
        }
    }
}

impl From<GvofBilateralParams> for BilateralParams {
    fn from(p: GvofBilateralParams) -> Self {
        Self {
            spatial_fwhm: p.spatial_fwhm,
            intensity_width: p.intensity_width,
            radius: p.radius,
        }
    }
}

impl From<NdfParams> for GvofNdfParams {
    fn from(p: NdfParams) -> Self {
        Self {
            kappa: p.kappa,
            iterations: p.iterations,
            dt: p.dt,
            smooth_fwhm: p.smooth_fwhm,
        }
    }
}

impl From<GvofNdfParams> for NdfParams {
    fn from(p: GvofNdfParams) -> Self {
        Self {
            kappa: p.kappa,
            iterations: p.iterations,
            dt: p.dt,
            smooth_fwhm: p.smooth_fwhm,
        }
    }
}

impl From<GvofParams> for GvofGvofParams {
    fn from(p: GvofParams) -> Self {
        Self {
            kappa: p.kappa,
            iterations: p.iterations,
            smooth_fwhm: p.smooth_fwhm,
            window_x: p.window.0,
            window_y: p.window.1,
            dt: p.dt,
            convergence_tol: p.convergence_tol.unwrap_or(0.0),
        }
    }
}

impl From<GvofGvofParams> for GvofParams {
    fn from(p: GvofGvofParams) -> Self {
        Self {
            kappa: p.kappa,
            iterations: p.iterations,
            smooth_fwhm: p.smooth_fwhm,
            window: (p.window_x, p.window_y),
            dt: p.dt,
            convergence_tol: (p.convergence_tol > 0.0).then_some(p.convergence_tol),
        }
    }
}

#[no_mangle]
pub extern "C" fn gvof_gaussian_params_default() -> GvofGaussianParams {
    GaussianParams::default().into()
}

#[no_mangle]
pub extern "C" fn gvof_bilateral_params_default() -> GvofBilateralParams {
    BilateralParams::default().into()
}

#[no_mangle]
pub extern "C" fn gvof_ndf_params_default() -> GvofNdfParams {
    NdfParams::default().into()
}

#[no_mangle]
pub extern "C" fn gvof_gvof_params_default() -> GvofGvofParams {
    GvofParams::default().into()
}

unsafe fn run(vol: *const GvofVolume, cfg: Option<FilterConfig>, out: *mut *mut GvofVolume) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let cfg = cfg.ok_or_else(|| null("params"))?;
        emit(out, apply_filter(v, &cfg).map_err(core)?)
    })
}

/// Slice-wise 2D Gaussian smoothing.
///
/// # Safety
/// Pointers must be valid; `out` receives a new handle on success.
#[no_mangle]
pub unsafe extern "C" fn gvof_filter_gaussian(
    vol: *const GvofVolume,
    params: *const GvofGaussianParams,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    run(vol, params.as_ref().map(|p| FilterConfig::Gaussian((*p).into())), out)
}

/// Slice-wise bilateral filter.
///
/// # Safety
/// Pointers must be valid; `out` receives a new handle on success.
#[no_mangle]
pub unsafe extern "C" fn gvof_filter_bilateral(
    vol: *const GvofVolume,
    params: *const GvofBilateralParams,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    run(vol, params.as_ref().map(|p| FilterConfig::Bilateral((*p).into())), out)
}

/// Perona-Malik diffusion with a frozen diffusivity.
///
/// # Safety
/// Pointers must be valid; `out` receives a new handle on success.
#[no_mangle]
pub unsafe extern "C" fn gvof_filter_ndf(
    vol: *const GvofVolume,
    params: *const GvofNdfParams,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    run(vol, params.as_ref().map(|p| FilterConfig::Ndf((*p).into())), out)
}

/// Orientation-coherence diffusion.
///
/// # Safety
/// Pointers must be valid; `out` receives a new handle on success.
#[no_mangle]
pub unsafe extern "C" fn gvof_filter_gvof(
    vol: *const GvofVolume,
    params: *const GvofGvofParams,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    run(vol, params.as_ref().map(|p| FilterConfig::Gvof((*p).into())), out)
}

/// Background SNR in dB over a spherical ROI (center in mm, diameter in mm).
///
/// # Safety
/// `center` must point to three values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_snr_db(vol: *const GvofVolume, center: *const f64, diameter: f64, out: *mut f64) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let m = sphere_mask(v.geometry(), triple(center, "center")?, diameter).map_err(core)?;
        put(out, metrics::snr_db(v, &m).map_err(core)?)
    })
}

/// CNR of a sphere against a spherical background ROI. The sphere mask is
/// eroded in-plane with a 3x3 element first.
///
/// # Safety
/// Center pointers must point to three values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_cnr(
    vol: *const GvofVolume,
    sphere_center: *const f64,
    sphere_diameter: f64,
    bg_center: *const f64,
    bg_diameter: f64,
    out: *mut f64,
) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let g = v.geometry();
        let s = sphere_mask(g, triple(sphere_center, "sphere_center")?, sphere_diameter).map_err(core)?;
        let b = sphere_mask(g, triple(bg_center, "bg_center")?, bg_diameter).map_err(core)?;
        put(out, metrics::cnr(v, &erode_mask_2d(&s), &b).map_err(core)?)
    })
}

/// Maximum inside a sphere mask dilated by one voxel.
///
/// # Safety
/// `center` must point to three values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_ac_max(vol: *const GvofVolume, center: *const f64, diameter: f64, out: *mut f64) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let m = sphere_mask(v.geometry(), triple(center, "center")?, diameter).map_err(core)?;
        put(out, metrics::ac_max(v, &dilate_mask(&m)).map_err(core)?)
    })
}

/// Edge resolution (FWHM, mm) from the rising x edge of a sphere.
///
/// # Safety
/// `center` must point to three values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_resolution_fwhm(
    vol: *const GvofVolume,
    center: *const f64,
    diameter: f64,
    out: *mut f64,
) -> GvofStatus {
    guard(|| {
        let v = vol_ref(vol, "vol")?;
        let edge = EdgeSpec {
            center: triple(center, "center")?,
            diameter,
            axis: Axis::X,
        };
        put(out, metrics::resolution_fwhm(v, &edge).map_err(core)?)
    })
}

#[no_mangle]
pub extern "C" fn gvof_percent_bias(ac_max_mean: f64, tac: f64) -> f64 {
    metrics::percent_bias(ac_max_mean, tac)
}

#[no_mangle]
pub extern "C" fn gvof_percent_difference(high: f64, low: f64) -> f64 {
    metrics::percent_difference(high, low)
}

/// One noisy acquisition of the default phantom layout.
///
/// `contrast` is `"2:1"` or `"4:1"`; `sensitivity <= 0` selects the
/// calibrated default.
///
/// # Safety
/// `contrast` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gvof_phantom_simulate(
    contrast: *const c_char,
    duration_s: f64,
    sensitivity: f64,
    seed: u64,
    out: *mut *mut GvofVolume,
) -> GvofStatus {
    guard(|| {
        if contrast.is_null() {
            return Err(null("contrast"));
        }
        let label = CStr::from_ptr(contrast)
            .to_str()
            .map_err(|_| (GvofStatus::InvalidArgument, "contrast is not valid UTF-8".into()))?;
        let cfg = StudyConfig::default();
        let c = Contrast::preset(label).map_err(core)?;
        let truth = rasterize_phantom(&cfg.phantom.spec(&c).map_err(core)?, cfg.phantom.supersample).map_err(core)?;
        let model = AcquisitionModel {
            duration: duration_s,
            sensitivity: if sensitivity > 0.0 {
                sensitivity
            } else {
                cfg.acquisition.sensitivity
            },
            psf_fwhm: cfg.acquisition.psf_fwhm,
            seed,
        };
        emit(out, simulate_acquisition(&truth, &model).map_err(core)?)
    })
}
