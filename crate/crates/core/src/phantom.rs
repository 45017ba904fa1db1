//! Synthetic torso phantom: ground-truth rasterization and a stochastic
//! acquisition model (PSF blur followed by voxelwise Poisson sampling).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradient::{convolve_3d_axis, gaussian_kernel_1d};
use crate::volume::{Geometry, Volume};

/// Sphere activity and background activity (kBq/ml) for a named contrast.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrast {
    pub label: String,
    pub sphere: f64,
    pub background: f64,
}

impl Contrast {
    /// Named presets: `"2:1"` and `"4:1"`.
    pub fn preset(label: &str) -> Result<Self> {
        let (sphere, background) = match label {
            "2:1" => (1668.0, 838.0),
            "4:1" => (2775.0, 697.0),
            other => {
                return Err(Error::Config(format!(
                    "unknown contrast preset {other:?} (expected \"2:1\" or \"4:1\")"
                )))
            }
        };
        Ok(Self {
            label: label.to_string(),
            sphere,
            background,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub diameter: f64,
    pub activity: f64,
}

/// Axis-aligned elliptical cylinder (axis along z).
#[derive(Clone, Debug, PartialEq)]
pub struct BodySpec {
    pub center: [f64; 3],
    pub semi_axes: [f64; 2],
    pub height: f64,
}

impl BodySpec {
    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let u = (p[0] - self.center[0]) / self.semi_axes[0];
        let v = (p[1] - self.center[1]) / self.semi_axes[1];
        u * u + v * v <= 1.0 && (p[2] - self.center[2]).abs() <= 0.5 * self.height
    }

    /// Whether a whole sphere fits inside the body.
    pub fn contains_sphere(&self, center: [f64; 3], radius: f64) -> bool {
        if (center[2] - self.center[2]).abs() + radius > 0.5 * self.height {
            return false;
        }
        // sample the in-plane rim; the ellipse is convex so this is a close check
        (0..360).all(|deg| {
            let t = (deg as f64).to_radians();
            let p = [center[0] + radius * t.cos(), center[1] + radius * t.sin(), self.center[2]];
            self.contains(p)
        })
    }

    pub fn volume_ml(&self) -> f64 {
        std::f64::consts::PI * self.semi_axes[0] * self.semi_axes[1] * self.height / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub geometry: Geometry,
    pub background_activity: f64,
    pub body: BodySpec,
    pub spheres: Vec<SphereSpec>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_activity >= 0.0) {
            return Err(Error::InvalidParameter("background activity must be >= 0".into()));
        }
        if self.body.semi_axes.iter().any(|&a| !(a > 0.0)) || !(self.body.height > 0.0) {
            return Err(Error::InvalidParameter("body extents must be > 0".into()));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.diameter > 0.0) || !(s.activity >= 0.0) {
                return Err(Error::InvalidParameter(format!("sphere {i}: bad diameter or activity")));
            }
            if !self.body.contains_sphere(s.center, s.diameter / 2.0) {
                return Err(Error::InvalidParameter(format!("sphere {i} is not inside the body")));
            }
            for (j, t) in self.spheres.iter().enumerate().skip(i + 1) {
                if distance(s.center, t.center) < 0.5 * (s.diameter + t.diameter) {
                    return Err(Error::OverlappingSpheres(i, j));
                }
            }
        }
        Ok(())
    }

    /// Activity at a point: first sphere containing it, then body, then zero.
    #[inline]
    pub fn activity_at(&self, p: [f64; 3]) -> f64 {
        for s in &self.spheres {
            let r = 0.5 * s.diameter;
            if dist2(p, s.center) <= r * r {
                return s.activity;
            }
        }
        if self.body.contains(p) {
            self.background_activity
        } else {
            0.0
        }
    }

    /// Total activity of the continuous phantom (kBq), assuming every
    /// region is fully inside the grid.
    pub fn analytic_total_activity(&self) -> f64 {
        let sphere_ml = |s: &SphereSpec| std::f64::consts::PI / 6.0 * s.diameter.powi(3) / 1000.0;
        let spheres: f64 = self.spheres.iter().map(|s| sphere_ml(s) * s.activity).sum();
        let displaced: f64 = self.spheres.iter().map(sphere_ml).sum();
        spheres + (self.body.volume_ml() - displaced) * self.background_activity
    }
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[inline]
pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    dist2(a, b).sqrt()
}

/// Ground truth with partial-volume mixing estimated from `n^3` subsamples per voxel.
pub fn rasterize_phantom(spec: &PhantomSpec, supersample: usize) -> Result<Volume> {
    if supersample == 0 {
        return Err(Error::InvalidParameter("supersample must be >= 1".into()));
    }
    spec.validate()?;
    let g = spec.geometry;
    let [nx, ny, nz] = g.dims;
    let half_diag = 0.5 * (g.spacing.iter().map(|s| s * s).sum::<f64>()).sqrt();
    let n = supersample;
    let offsets: Vec<[f64; 3]> = (0..n * n * n)
        .map(|k| {
            let (a, b, c) = (k % n, (k / n) % n, k / (n * n));
            let f = |i: usize, s: f64| ((i as f64 + 0.5) / n as f64 - 0.5) * s;
            [f(a, g.spacing[0]), f(b, g.spacing[1]), f(c, g.spacing[2])]
        })
        .collect();
    let min_semi = spec.body.semi_axes[0].min(spec.body.semi_axes[1]);

    let slabs: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut slab = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let p = g.position(x, y, z);
                    // a voxel clear of every boundary is uniform
                    let near_sphere = spec.spheres.iter().any(|s| {
                        (distance(p, s.center) - 0.5 * s.diameter).abs() <= half_diag
                    });
                    let u = (p[0] - spec.body.center[0]) / spec.body.semi_axes[0];
                    let v = (p[1] - spec.body.center[1]) / spec.body.semi_axes[1];
                    let rho = (u * u + v * v).sqrt();
                    let dz = (p[2] - spec.body.center[2]).abs() - 0.5 * spec.body.height;
                    let near_body = (rho - 1.0).abs() * min_semi <= half_diag * 2.0
                        || dz.abs() <= half_diag;
                    let value = if near_sphere || near_body {
                        let sum: f64 = offsets
                            .iter()
                            .map(|o| spec.activity_at([p[0] + o[0], p[1] + o[1], p[2] + o[2]]))
                            .sum();
                        sum / offsets.len() as f64
                    } else {
                        spec.activity_at(p)
                    };
                    slab.push(value);
                }
            }
            slab
        })
        .collect();
    Volume::new(g, slabs.concat())
}

/// Stand-in for the scanner and reconstruction chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionModel {
    /// Acquisition duration in seconds.
    pub duration: f64,
    /// Expected counts per (kBq/ml) per second per voxel.
    pub sensitivity: f64,
    pub psf_fwhm: f64,
    pub seed: u64,
}

impl AcquisitionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.sensitivity > 0.0) || !(self.psf_fwhm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "acquisition needs duration > 0, sensitivity > 0, psf_fwhm >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// 3D separable Gaussian blur with replicate borders; identity when `fwhm == 0`.
pub fn blur_3d(vol: &Volume, fwhm: f64) -> Result<Volume> {
    if fwhm == 0.0 {
        return Ok(vol.clone());
    }
    let g = *vol.geometry();
    let mut data = vol.data().to_vec();
    for axis in 0..3 {
        let k = gaussian_kernel_1d(fwhm, g.spacing[axis])?;
        data = convolve_3d_axis(&data, g.dims, axis, &k);
    }
    Volume::new(g, data)
}

const MAX_LAMBDA: f64 = 9.223_372_036_854_775_808e18; // 2^63

/// Blur, scale to expected counts, draw Poisson counts, scale back to activity.
pub fn simulate_acquisition(truth: &Volume, model: &AcquisitionModel) -> Result<Volume> {
    model.validate()?;
    if truth.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("truth activity must be >= 0".into()));
    }
    let blurred = blur_3d(truth, model.psf_fwhm)?;
    let scale = model.sensitivity * model.duration;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut out = Vec::with_capacity(blurred.data().len());
    for &b in blurred.data() {
        let lambda = b.max(0.0) * scale;
        if lambda > MAX_LAMBDA {
            return Err(Error::CountOverflow(lambda));
        }
        let counts = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::InvalidParameter(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
        out.push(counts / scale);
    }
    Volume::new(*truth.geometry(), out)
}

/// `n` independent acquisitions of the same truth with seeds `base_seed + k`.
pub fn generate_realizations(
    truth: &Volume,
    model: &AcquisitionModel,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Volume>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let m = AcquisitionModel {
                seed: base_seed.wrapping_add(k),
                ..*model
            };
            simulate_acquisition(truth, &m)
        })
        .collect()
}
