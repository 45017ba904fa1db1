//! The four denoising filters. Every filter works slice by slice, so slices
//! are processed in parallel; the per-slice arithmetic is sequential and the
//! result does not depend on the thread count.
//!
//! The diffusion filters run on intensities rescaled to `[0, 1]` with the
//! volume-global minimum and maximum, which makes `kappa` unitless. Their
//! diffusivities are evaluated from unit-lattice gradients, consistent with
//! the 4-neighbour stencil whose grid spacing is folded into `dt`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{gaussian_kernel_1d, gaussian_smooth_slice, gradient_2d, normalize_minmax, orientation_sum};
use crate::volume::{Slice, Volume};

const LATTICE: [f64; 2] = [1.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianParams {
    pub fwhm: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self { fwhm: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilateralParams {
    pub spatial_fwhm: f64,
    /// Intensity-domain width as a fraction of the slice dynamic range.
    pub intensity_width: f64,
    pub radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            spatial_fwhm: 4.0,
            intensity_width: 0.20,
            radius: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NdfParams {
    pub kappa: f64,
    pub iterations: usize,
    pub dt: f64,
    /// FWHM of the one-off smoothing used to estimate gradients.
    pub smooth_fwhm: f64,
}

impl Default for NdfParams {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            iterations: 10,
            dt: 0.20,
            smooth_fwhm: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GvofParams {
    pub kappa: f64,
    pub iterations: usize,
    pub smooth_fwhm: f64,
    /// Orientation window extents (x, y), both odd.
    pub window: (usize, usize),
    pub dt: f64,
    /// Stop early once the relative L1 change between iterates drops below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
}

impl Default for GvofParams {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            iterations: 60,
            smooth_fwhm: 4.0,
            window: (3, 3),
            dt: 0.20,
            convergence_tol: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterConfig {
    Gaussian(GaussianParams),
    Bilateral(BilateralParams),
    Ndf(NdfParams),
    Gvof(GvofParams),
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(what()))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    check(dt > 0.0 && dt <= 0.25, || format!("dt must be in (0, 0.25], got {dt}"))
}

impl FilterConfig {
    pub fn name(&self) -> &'static str {
        match self {
            FilterConfig::Gaussian(_) => "gf",
            FilterConfig::Bilateral(_) => "bf",
            FilterConfig::Ndf(_) => "ndf",
            FilterConfig::Gvof(_) => "gvof",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterConfig::Gaussian(p) => check(p.fwhm > 0.0 && p.fwhm.is_finite(), || format!("gf fwhm {}", p.fwhm)),
            FilterConfig::Bilateral(p) => {
                check(p.spatial_fwhm > 0.0 && p.spatial_fwhm.is_finite(), || format!("bf spatial_fwhm {}", p.spatial_fwhm))?;
                check(p.intensity_width > 0.0 && p.intensity_width.is_finite(), || {
                    format!("bf intensity_width {}", p.intensity_width)
                })?;
                check(p.radius >= 1, || "bf radius must be >= 1".into())
            }
            FilterConfig::Ndf(p) => {
                check(p.kappa > 0.0 && p.kappa.is_finite(), || format!("ndf kappa {}", p.kappa))?;
                check(p.iterations >= 1, || "ndf iterations must be >= 1".into())?;
                check(p.smooth_fwhm > 0.0, || format!("ndf smooth_fwhm {}", p.smooth_fwhm))?;
                check_dt(p.dt)
            }
            FilterConfig::Gvof(p) => {
                check(p.kappa > 0.0 && p.kappa.is_finite(), || format!("gvof kappa {}", p.kappa))?;
                check(p.iterations >= 1, || "gvof iterations must be >= 1".into())?;
                check(p.smooth_fwhm > 0.0, || format!("gvof smooth_fwhm {}", p.smooth_fwhm))?;
                check(p.window.0 % 2 == 1 && p.window.1 % 2 == 1, || {
                    format!("gvof window extents must be odd, got {:?}", p.window)
                })?;
                if let Some(tol) = p.convergence_tol {
                    check(tol > 0.0, || format!("gvof convergence_tol {tol}"))?;
                }
                check_dt(p.dt)
            }
        }
    }

    /// Validated construction.
    pub fn checked(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

/// Affine map used to bring a volume to `[0, 1]` and back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleInfo {
    pub min: f64,
    pub max: f64,
    /// Set when the input was constant and left untouched.
    pub identity: bool,
}

pub fn normalize_intensity(vol: &Volume) -> Result<(Volume, ScaleInfo)> {
    let (min, max) = vol.min_max();
    if !(max > min) {
        return Ok((
            vol.clone(),
            ScaleInfo {
                min,
                max,
                identity: true,
            },
        ));
    }
    let range = max - min;
    let out = vol.map(|v| (v - min) / range)?;
    Ok((out, ScaleInfo { min, max, identity: false }))
}

pub fn denormalize_intensity(vol: &Volume, scale: &ScaleInfo) -> Result<Volume> {
    if scale.identity {
        return Ok(vol.clone());
    }
    let range = scale.max - scale.min;
    vol.map(|v| v * range + scale.min)
}

/// Perona-Malik diffusivity `exp(-(m / kappa)^2)`.
pub fn coeff_pm(magnitude: &[f64], kappa: f64) -> Vec<f64> {
    magnitude.iter().map(|&m| (-(m / kappa).powi(2)).exp()).collect()
}

/// GVOF diffusivity `exp(-((m * alpha) / kappa)^2)`.
pub fn coeff_gvof(magnitude: &[f64], alpha: &[f64], kappa: f64) -> Vec<f64> {
    magnitude
        .iter()
        .zip(alpha)
        .map(|(&m, &a)| (-((m * a) / kappa).powi(2)).exp())
        .collect()
}

/// One explicit step of `dI/dt = div(c grad I)` on the unit lattice.
///
/// Face conductances are the mean of the two adjacent cell values; the
/// border is zero-flux. Every face flux is added to one cell and subtracted
/// from its neighbour, so the slice sum is conserved.
pub fn diffusion_step(slice: &Slice, coeff: &[f64], dt: f64) -> Result<Slice> {
    check_dt(dt)?;
    let (nx, ny) = (slice.nx, slice.ny);
    if coeff.len() != nx * ny {
        return Err(Error::DimensionMismatch {
            expected: [nx, ny, 1],
            found: [coeff.len(), 1, 1],
        });
    }
    let d = &slice.data;
    let mut delta = vec![0.0; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            if x + 1 < nx {
                let j = i + 1;
                let flux = 0.5 * (coeff[i] + coeff[j]) * (d[j] - d[i]);
                delta[i] += flux;
                delta[j] -= flux;
            }
            if y + 1 < ny {
                let j = i + nx;
                let flux = 0.5 * (coeff[i] + coeff[j]) * (d[j] - d[i]);
                delta[i] += flux;
                delta[j] -= flux;
            }
        }
    }
    let data = d.iter().zip(&delta).map(|(v, dv)| v + dt * dv).collect();
    Ok(Slice {
        data,
        ..slice.clone()
    })
}

fn per_slice(vol: &Volume, f: impl Fn(&Slice) -> Result<Slice> + Sync) -> Result<Volume> {
    let slices = vol.slices();
    let out: Result<Vec<Slice>> = slices.par_iter().map(&f).collect();
    Volume::from_slices(*vol.geometry(), out?)
}

fn with_normalized(vol: &Volume, f: impl Fn(&Slice) -> Result<Slice> + Sync) -> Result<Volume> {
    let (norm, scale) = normalize_intensity(vol)?;
    if scale.identity {
        return Ok(vol.clone());
    }
    let filtered = per_slice(&norm, f)?;
    denormalize_intensity(&filtered, &scale)
}

/// Perona-Malik diffusion with the diffusivity frozen from a once-smoothed
/// copy of the input slice.
pub fn ndf_slice(slice: &Slice, p: &NdfParams) -> Result<Slice> {
    let smoothed = gaussian_smooth_slice(slice, p.smooth_fwhm)?;
    let grad = gradient_2d(&smoothed, LATTICE)?;
    let c = coeff_pm(&grad.magnitude, p.kappa);
    let mut cur = slice.clone();
    for _ in 0..p.iterations {
        cur = diffusion_step(&cur, &c, p.dt)?;
    }
    Ok(cur)
}

pub fn run_ndf(vol: &Volume, p: &NdfParams) -> Result<Volume> {
    FilterConfig::Ndf(*p).validate()?;
    with_normalized(vol, |s| ndf_slice(s, p))
}

/// Where the GVOF orientation coherence comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    Computed,
    /// Pin alpha to one, reducing the diffusivity to plain Perona-Malik.
    ForcedOne,
}

/// One GVOF iteration: gradient, orientation coherence and diffusivity from
/// the current iterate, then a diffusion step.
pub fn gvof_step(cur: &Slice, p: &GvofParams, mode: AlphaMode) -> Result<Slice> {
    let grad = gradient_2d(cur, LATTICE)?;
    let alpha = match mode {
        AlphaMode::Computed => normalize_minmax(&orientation_sum(&grad, p.window)?),
        AlphaMode::ForcedOne => vec![1.0; grad.magnitude.len()],
    };
    let c = coeff_gvof(&grad.magnitude, &alpha, p.kappa);
    diffusion_step(cur, &c, p.dt)
}

/// Perona-Malik step with the diffusivity recomputed from the current iterate.
pub fn pm_recompute_step(cur: &Slice, kappa: f64, dt: f64) -> Result<Slice> {
    let grad = gradient_2d(cur, LATTICE)?;
    let c = coeff_pm(&grad.magnitude, kappa);
    diffusion_step(cur, &c, dt)
}

fn l1_relative_change(prev: &Slice, next: &Slice) -> f64 {
    let num: f64 = prev.data.iter().zip(&next.data).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = prev.data.iter().map(|v| v.abs()).sum();
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// GVOF on one slice already scaled to `[0, 1]`.
pub fn gvof_slice(slice: &Slice, p: &GvofParams, mode: AlphaMode) -> Result<Slice> {
    let mut cur = gaussian_smooth_slice(slice, p.smooth_fwhm)?;
    for _ in 0..p.iterations {
        let next = gvof_step(&cur, p, mode)?;
        let done = p
            .convergence_tol
            .is_some_and(|tol| l1_relative_change(&cur, &next) < tol);
        cur = next;
        if done {
            break;
        }
    }
    Ok(cur)
}

pub fn run_gvof(vol: &Volume, p: &GvofParams) -> Result<Volume> {
    run_gvof_with(vol, p, AlphaMode::Computed)
}

pub fn run_gvof_with(vol: &Volume, p: &GvofParams, mode: AlphaMode) -> Result<Volume> {
    FilterConfig::Gvof(*p).validate()?;
    with_normalized(vol, |s| gvof_slice(s, p, mode))
}

pub fn run_gaussian(vol: &Volume, p: &GaussianParams) -> Result<Volume> {
    FilterConfig::Gaussian(*p).validate()?;
    per_slice(vol, |s| gaussian_smooth_slice(s, p.fwhm))
}

pub fn bilateral_slice(slice: &Slice, p: &BilateralParams) -> Result<Slice> {
    let (lo, hi) = slice.min_max();
    let sigma_i = p.intensity_width * (hi - lo);
    if !(sigma_i > 0.0) {
        return Ok(slice.clone());
    }
    let r = p.radius as i64;
    // spatial weights come from the same discretization as the Gaussian filter's taps
    let sx = p.spatial_fwhm / crate::gradient::FWHM_PER_SIGMA / slice.spacing[0];
    let sy = p.spatial_fwhm / crate::gradient::FWHM_PER_SIGMA / slice.spacing[1];
    let side = (2 * r + 1) as usize;
    let mut ws = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let e = (dx * dx) as f64 / (2.0 * sx * sx) + (dy * dy) as f64 / (2.0 * sy * sy);
            ws.push((-e).exp());
        }
    }
    let inv = 1.0 / (2.0 * sigma_i * sigma_i);
    let (nx, ny) = (slice.nx as i64, slice.ny as i64);
    let d = &slice.data;
    let mut out = Vec::with_capacity(d.len());
    for y in 0..ny {
        for x in 0..nx {
            let center = d[(y * nx + x) as usize];
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= ny {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= nx {
                        continue;
                    }
                    let v = d[(yy * nx + xx) as usize];
                    let w = ws[((dy + r) * (2 * r + 1) + dx + r) as usize] * (-(v - center).powi(2) * inv).exp();
                    num += w * v;
                    den += w;
                }
            }
            out.push(num / den);
        }
    }
    Ok(Slice { data: out, ..slice.clone() })
}

pub fn run_bilateral(vol: &Volume, p: &BilateralParams) -> Result<Volume> {
    FilterConfig::Bilateral(*p).validate()?;
    per_slice(vol, |s| bilateral_slice(s, p))
}

pub fn apply_filter(vol: &Volume, config: &FilterConfig) -> Result<Volume> {
    config.validate()?;
    match config {
        FilterConfig::Gaussian(p) => run_gaussian(vol, p),
        FilterConfig::Bilateral(p) => run_bilateral(vol, p),
        FilterConfig::Ndf(p) => run_ndf(vol, p),
        FilterConfig::Gvof(p) => run_gvof(vol, p),
    }
}

/// The x and y taps of the separable in-plane Gaussian.
pub fn gaussian_kernel_2d(fwhm: f64, spacing: [f64; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((gaussian_kernel_1d(fwhm, spacing[0])?, gaussian_kernel_1d(fwhm, spacing[1])?))
}
