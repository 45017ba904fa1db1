//! End-to-end study runner: phantom, acquisitions, filters and metrics over a
//! grid of contrasts, durations, filters and realizations.
//!
//! Configuration is TOML. Every section and key is optional; missing keys take
//! the library defaults and unknown keys are rejected.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{apply_filter, BilateralParams, FilterConfig, GaussianParams, GvofParams, NdfParams};
use crate::io::write_volume;
use crate::metrics::{ac_max, cnr, cov, percent_bias, percent_difference, resolution_fwhm, snr_db, EdgeSpec};
use crate::phantom::{
    distance, generate_realizations, rasterize_phantom, AcquisitionModel, BodySpec, Contrast, PhantomSpec, SphereSpec,
};
use crate::volume::{dilate_mask, erode_mask_2d, sphere_mask, Axis, Geometry, Mask, Volume};

/// Expected counts per (kBq/ml) per second per voxel. Calibrated by bisection
/// so the unfiltered 900 s background SNR of the default 2:1 phantom averages
/// 9.59 dB over seeds 0..5 (`gvof calibrate`).
pub const DEFAULT_SENSITIVITY: f64 = 1.205960e-5;

pub const FULL_GRID_DIMS: [usize; 3] = [256, 256, 109];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomLayout {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub supersample: usize,
    pub body_semi_axes: [f64; 2],
    pub body_height: f64,
    /// Radius of the circle carrying the sphere centers (mm).
    pub ring_radius: f64,
    /// Angle of the first sphere; the rest follow at 60 degree steps.
    pub ring_start_angle_deg: f64,
    pub sphere_diameters: Vec<f64>,
    /// Phantom center in mm; defaults to the voxel at `dims / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
}

impl Default for PhantomLayout {
    fn default() -> Self {
        Self {
            dims: [128, 128, 32],
            spacing: [2.67, 2.67, 2.0],
            supersample: 4,
            body_semi_axes: [147.0, 115.0],
            body_height: 180.0,
            ring_radius: 57.2,
            ring_start_angle_deg: 90.0,
            sphere_diameters: vec![37.0, 28.0, 22.0, 17.0, 13.0, 10.0],
            center: None,
        }
    }
}

impl PhantomLayout {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing)
    }

    pub fn center(&self) -> Result<[f64; 3]> {
        let g = self.geometry()?;
        Ok(self
            .center
            .unwrap_or_else(|| g.position(self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2)))
    }

    /// Sphere centers on the ring, snapped to the nearest voxel center so
    /// every sphere is sampled symmetrically about its center voxel.
    pub fn sphere_centers(&self) -> Result<Vec<[f64; 3]>> {
        let c = self.center()?;
        let h = self.spacing;
        let snap = |v: f64, a: usize| (v / h[a]).round() * h[a];
        let n = self.sphere_diameters.len();
        Ok((0..n)
            .map(|k| {
                let theta = (self.ring_start_angle_deg + 60.0 * k as f64).to_radians();
                [
                    snap(c[0] + self.ring_radius * theta.cos(), 0),
                    snap(c[1] + self.ring_radius * theta.sin(), 1),
                    c[2],
                ]
            })
            .collect())
    }

    pub fn spec(&self, contrast: &Contrast) -> Result<PhantomSpec> {
        let geometry = self.geometry()?;
        let center = self.center()?;
        let spheres = self
            .sphere_centers()?
            .into_iter()
            .zip(&self.sphere_diameters)
            .map(|(c, &d)| SphereSpec {
                center: c,
                diameter: d,
                activity: contrast.sphere,
            })
            .collect();
        let spec = PhantomSpec {
            geometry,
            background_activity: contrast.background,
            body: BodySpec {
                center,
                semi_axes: self.body_semi_axes,
                height: self.body_height,
            },
            spheres,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub durations: Vec<f64>,
    pub sensitivity: f64,
    pub psf_fwhm: f64,
    /// Realization `k` of every cell uses seed `base_seed + k`.
    pub base_seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            durations: vec![900.0, 1200.0, 2000.0, 4000.0],
            sensitivity: DEFAULT_SENSITIVITY,
            psf_fwhm: 4.5,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    None,
    Gf,
    Bf,
    Ndf,
    Gvof,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::Gf => "gf",
            FilterKind::Bf => "bf",
            FilterKind::Ndf => "ndf",
            FilterKind::Gvof => "gvof",
        }
    }

    /// The filter configuration for this kind, `None` for the unfiltered arm.
    pub fn config(self, filters: &FilterSection) -> Option<FilterConfig> {
        match self {
            FilterKind::None => None,
            FilterKind::Gf => Some(FilterConfig::Gaussian(filters.gf)),
            FilterKind::Bf => Some(FilterConfig::Bilateral(filters.bf)),
            FilterKind::Ndf => Some(FilterConfig::Ndf(filters.ndf)),
            FilterKind::Gvof => Some(FilterConfig::Gvof(filters.gvof)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub contrasts: Vec<String>,
    pub realizations: usize,
    pub filters: Vec<FilterKind>,
    /// Background ROI center relative to the phantom center (mm).
    pub background_roi_offset: [f64; 3],
    pub background_roi_diameter: f64,
    /// Minimum surface-to-surface gap between the background ROI and any sphere.
    pub clearance_mm: f64,
    /// Sphere whose rising x edge is used for the resolution measurement.
    pub resolution_sphere_mm: f64,
    pub save_volumes: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            contrasts: vec!["2:1".into(), "4:1".into()],
            realizations: 5,
            filters: vec![FilterKind::None, FilterKind::Gf, FilterKind::Bf, FilterKind::Ndf, FilterKind::Gvof],
            background_roi_offset: [100.0, 0.0, 0.0],
            background_roi_diameter: 37.0,
            clearance_mm: 30.0,
            resolution_sphere_mm: 37.0,
            save_volumes: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub gf: GaussianParams,
    pub bf: BilateralParams,
    pub ndf: NdfParams,
    pub gvof: GvofParams,
}

/// Provenance written alongside results. Ignored when a manifest is read
/// back as a config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifestInfo {
    pub version: String,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub phantom: PhantomLayout,
    pub acquisition: AcquisitionConfig,
    pub study: StudySection,
    pub filters: FilterSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("study config is always serializable")
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.study.realizations as u64)
            .map(|k| self.acquisition.base_seed.wrapping_add(k))
            .collect()
    }

    /// Copy of this config with the provenance section filled in.
    pub fn manifest(&self) -> StudyConfig {
        StudyConfig {
            manifest: Some(ManifestInfo {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seeds: self.seeds(),
            }),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.study;
        if s.realizations == 0 {
            return Err(Error::Config("study.realizations must be >= 1".into()));
        }
        if s.filters.is_empty() {
            return Err(Error::Config("study.filters must list at least one filter".into()));
        }
        if s.contrasts.is_empty() {
            return Err(Error::Config("study.contrasts must not be empty".into()));
        }
        for c in &s.contrasts {
            Contrast::preset(c)?;
        }
        if self.acquisition.durations.is_empty() {
            return Err(Error::Config("acquisition.durations must not be empty".into()));
        }
        if self.phantom.supersample == 0 {
            return Err(Error::Config("phantom.supersample must be >= 1".into()));
        }
        if !self.phantom.sphere_diameters.contains(&s.resolution_sphere_mm) {
            return Err(Error::Config(format!(
                "study.resolution_sphere_mm {} is not one of phantom.sphere_diameters",
                s.resolution_sphere_mm
            )));
        }
        for &d in &self.acquisition.durations {
            AcquisitionModel {
                duration: d,
                sensitivity: self.acquisition.sensitivity,
                psf_fwhm: self.acquisition.psf_fwhm,
                seed: 0,
            }
            .validate()?;
        }
        for kind in &s.filters {
            if let Some(f) = kind.config(&self.filters) {
                f.validate()?;
            }
        }
        self.phantom.spec(&Contrast::preset(&s.contrasts[0])?)?;
        self.background_center().map(|_| ())
    }

    /// Background ROI center, after checking it fits the grid and the body and
    /// keeps the configured clearance from every sphere.
    pub fn background_center(&self) -> Result<[f64; 3]> {
        let s = &self.study;
        let c = self.phantom.center()?;
        let g = self.phantom.geometry()?;
        let roi = [
            c[0] + s.background_roi_offset[0],
            c[1] + s.background_roi_offset[1],
            c[2] + s.background_roi_offset[2],
        ];
        let r = 0.5 * s.background_roi_diameter;
        let ext = g.extent();
        if (0..3).any(|a| roi[a] - r < ext[a][0] || roi[a] + r > ext[a][1]) {
            return Err(Error::InvalidGeometry(format!(
                "background ROI of {} mm at {roi:?} does not fit inside the grid",
                s.background_roi_diameter
            )));
        }
        let body = BodySpec {
            center: c,
            semi_axes: self.phantom.body_semi_axes,
            height: self.phantom.body_height,
        };
        if !body.contains_sphere(roi, r) {
            return Err(Error::InvalidGeometry("background ROI extends outside the body".into()));
        }
        let gap = self
            .phantom
            .sphere_centers()?
            .iter()
            .zip(&self.phantom.sphere_diameters)
            .map(|(sc, &d)| distance(*sc, roi) - r - 0.5 * d)
            .fold(f64::INFINITY, f64::min);
        if gap < s.clearance_mm {
            return Err(Error::ClearanceUnsatisfiable {
                required_mm: s.clearance_mm,
                found_mm: gap,
            });
        }
        Ok(roi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Realization(usize),
    Aggregate,
}

/// One CSV row. Realization rows carry per-volume metrics; the aggregate row
/// of a (contrast, duration, filter, sphere) cell carries realization means
/// plus bias, reproducibility and the CoV of SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub contrast: String,
    pub duration_s: f64,
    pub filter: String,
    pub kind: RowKind,
    pub sphere_mm: f64,
    pub snr_db: Option<f64>,
    pub cnr: Option<f64>,
    pub fwhm_mm: Option<f64>,
    pub ac_max: Option<f64>,
    pub bias_pct: Option<f64>,
    pub repro_pct: Option<f64>,
    pub cov_snr: Option<f64>,
}

/// Masks shared by every volume of a study.
#[derive(Clone, Debug)]
pub struct StudyMasks {
    pub background: Mask,
    /// Per sphere: (geometric mask eroded in-plane, geometric mask dilated).
    pub spheres: Vec<(Mask, Mask)>,
    pub edge: EdgeSpec,
}

impl StudyMasks {
    pub fn new(cfg: &StudyConfig) -> Result<Self> {
        let g = cfg.phantom.geometry()?;
        let background = sphere_mask(&g, cfg.background_center()?, cfg.study.background_roi_diameter)?;
        let centers = cfg.phantom.sphere_centers()?;
        let spheres = centers
            .iter()
            .zip(&cfg.phantom.sphere_diameters)
            .map(|(&c, &d)| {
                let m = sphere_mask(&g, c, d)?;
                Ok((erode_mask_2d(&m), dilate_mask(&m)))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = cfg
            .phantom
            .sphere_diameters
            .iter()
            .position(|&d| d == cfg.study.resolution_sphere_mm)
            .ok_or_else(|| Error::Config("resolution sphere not in layout".into()))?;
        Ok(Self {
            background,
            spheres,
            edge: EdgeSpec {
                center: centers[k],
                diameter: cfg.study.resolution_sphere_mm,
                axis: Axis::X,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct VolumeMetrics {
    snr: f64,
    /// `None` when the edge fit fails on this volume.
    fwhm: Option<f64>,
    /// Per sphere: CNR (`None` when erosion empties the mask) and AC_max.
    per_sphere: Vec<(Option<f64>, f64)>,
}

fn measure(vol: &Volume, masks: &StudyMasks) -> Result<VolumeMetrics> {
    let snr = snr_db(vol, &masks.background)?;
    let fwhm = match resolution_fwhm(vol, &masks.edge) {
        Ok(f) => Some(f),
        Err(Error::NoEdgePeak | Error::FitNonConvergence { .. }) => None,
        Err(e) => return Err(e),
    };
    let per_sphere = masks
        .spheres
        .iter()
        .map(|(eroded, dilated)| {
            let c = match cnr(vol, eroded, &masks.background) {
                Ok(c) => Some(c),
                Err(Error::SphereTooSmall) => None,
                Err(e) => return Err(e),
            };
            Ok((c, ac_max(vol, dilated)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VolumeMetrics { snr, fwhm, per_sphere })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// File stem for a saved volume, e.g. `2-1_900s_gvof_r3`.
pub fn volume_stem(contrast: &str, duration: f64, filter: FilterKind, realization: usize) -> String {
    format!(
        "{}_{}s_{}_r{}",
        contrast.replace(':', "-"),
        crate::io::format_sig6(duration),
        filter.name(),
        realization
    )
}

/// Runs the whole grid. When `volume_dir` is given and `study.save_volumes`
/// is set, every filtered realization is written there.
///
/// Rows are ordered contrast, duration, filter, sphere, then realization with
/// the aggregate row last. The output does not depend on the thread count.
pub fn experiment_report(cfg: &StudyConfig, volume_dir: Option<&Path>) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let masks = StudyMasks::new(cfg)?;
    let s = &cfg.study;
    let n = s.realizations;
    let tac_of = |c: &Contrast| c.sphere;
    let mut rows = Vec::new();

    for label in &s.contrasts {
        let contrast = Contrast::preset(label)?;
        let truth = rasterize_phantom(&cfg.phantom.spec(&contrast)?, cfg.phantom.supersample)?;
        for &duration in &cfg.acquisition.durations {
            let model = AcquisitionModel {
                duration,
                sensitivity: cfg.acquisition.sensitivity,
                psf_fwhm: cfg.acquisition.psf_fwhm,
                seed: cfg.acquisition.base_seed,
            };
            let noisy = generate_realizations(&truth, &model, n, cfg.acquisition.base_seed)?;
            let jobs: Vec<(FilterKind, usize)> =
                s.filters.iter().flat_map(|&f| (0..n).map(move |k| (f, k))).collect();
            let measured = jobs
                .par_iter()
                .map(|&(kind, k)| {
                    let filtered;
                    let vol = match kind.config(&cfg.filters) {
                        Some(fc) => {
                            filtered = apply_filter(&noisy[k], &fc)?;
                            &filtered
                        }
                        None => &noisy[k],
                    };
                    if let (true, Some(dir)) = (s.save_volumes, volume_dir) {
                        let stem = volume_stem(label, duration, kind, k);
                        write_volume(vol, &dir.join(format!("{stem}.hdr")))?;
                    }
                    measure(vol, &masks)
                })
                .collect::<Result<Vec<_>>>()?;

            for (fi, &kind) in s.filters.iter().enumerate() {
                let cell = &measured[fi * n..(fi + 1) * n];
                let snrs: Vec<f64> = cell.iter().map(|m| m.snr).collect();
                let cov_snr = if n >= 2 { Some(cov(&snrs)?) } else { None };
                for (si, &d) in cfg.phantom.sphere_diameters.iter().enumerate() {
                    let is_res = d == s.resolution_sphere_mm;
                    let row = |kind_: RowKind| ReportRow {
                        contrast: label.clone(),
                        duration_s: duration,
                        filter: kind.name().to_string(),
                        kind: kind_,
                        sphere_mm: d,
                        snr_db: None,
                        cnr: None,
                        fwhm_mm: None,
                        ac_max: None,
                        bias_pct: None,
                        repro_pct: None,
                        cov_snr: None,
                    };
                    for (k, m) in cell.iter().enumerate() {
                        rows.push(ReportRow {
                            snr_db: Some(m.snr),
                            cnr: m.per_sphere[si].0,
                            fwhm_mm: m.fwhm.filter(|_| is_res),
                            ac_max: Some(m.per_sphere[si].1),
                            ..row(RowKind::Realization(k))
                        });
                    }
                    let cnrs: Vec<f64> = cell.iter().filter_map(|m| m.per_sphere[si].0).collect();
                    let acs: Vec<f64> = cell.iter().map(|m| m.per_sphere[si].1).collect();
                    let fwhms: Vec<f64> = cell.iter().filter_map(|m| m.fwhm).collect();
                    let hi = acs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lo = acs.iter().cloned().fold(f64::INFINITY, f64::min);
                    rows.push(ReportRow {
                        snr_db: Some(mean(&snrs)),
                        cnr: (!cnrs.is_empty()).then(|| mean(&cnrs)),
                        fwhm_mm: (is_res && !fwhms.is_empty()).then(|| mean(&fwhms)),
                        ac_max: Some(mean(&acs)),
                        bias_pct: Some(percent_bias(mean(&acs), tac_of(&contrast))),
                        repro_pct: Some(percent_difference(hi, lo)),
                        cov_snr,
                        ..row(RowKind::Aggregate)
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Mean unfiltered background SNR over the configured realizations for one
/// contrast and duration.
pub fn unfiltered_snr(cfg: &StudyConfig, contrast: &str, duration: f64) -> Result<f64> {
    let c = Contrast::preset(contrast)?;
    let truth = rasterize_phantom(&cfg.phantom.spec(&c)?, cfg.phantom.supersample)?;
    let masks = StudyMasks::new(cfg)?;
    let model = AcquisitionModel {
        duration,
        sensitivity: cfg.acquisition.sensitivity,
        psf_fwhm: cfg.acquisition.psf_fwhm,
        seed: cfg.acquisition.base_seed,
    };
    let vols = generate_realizations(&truth, &model, cfg.study.realizations, cfg.acquisition.base_seed)?;
    let snrs = vols
        .iter()
        .map(|v| snr_db(v, &masks.background))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&snrs))
}

/// Bisection on `log(sensitivity)` for the sensitivity whose mean unfiltered
/// SNR at (`contrast`, `duration`) equals `target_db`. The seeds stay fixed,
/// so the objective is a deterministic, monotone-in-expectation function.
pub fn calibrate_sensitivity(cfg: &StudyConfig, contrast: &str, duration: f64, target_db: f64) -> Result<f64> {
    let c = Contrast::preset(contrast)?;
    let truth = rasterize_phantom(&cfg.phantom.spec(&c)?, cfg.phantom.supersample)?;
    let masks = StudyMasks::new(cfg)?;
    let eval = |s: f64| -> Result<f64> {
        let model = AcquisitionModel {
            duration,
            sensitivity: s,
            psf_fwhm: cfg.acquisition.psf_fwhm,
            seed: cfg.acquisition.base_seed,
        };
        let vols = generate_realizations(&truth, &model, cfg.study.realizations, cfg.acquisition.base_seed)?;
        let snrs = vols
            .iter()
            .map(|v| snr_db(v, &masks.background))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean(&snrs))
    };
    // SNR is close to 10 log10(counts) for Poisson noise: start from that guess
    let guess = 10f64.powf(target_db / 10.0) / (c.background * duration);
    let (mut lo, mut hi) = (guess.ln() - 2.0, guess.ln() + 2.0);
    if eval(lo.exp())? > target_db || eval(hi.exp())? < target_db {
        return Err(Error::InvalidParameter(format!(
            "target SNR {target_db} dB is not bracketed around sensitivity {guess:e}"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if eval(mid.exp())? < target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
