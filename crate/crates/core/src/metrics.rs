//! Image-quality and quantitation metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gradient::FWHM_PER_SIGMA;
use crate::volume::{line_profile, roi_stats, Axis, Mask, Volume};

/// `20 log10(mean / sd)` over a background ROI.
pub fn snr_db(vol: &Volume, bg_mask: &Mask) -> Result<f64> {
    let s = roi_stats(vol, bg_mask)?;
    if s.sd == 0.0 {
        return Err(Error::InfiniteSnr);
    }
    if !(s.mean > 0.0) {
        return Err(Error::InvalidParameter(format!("background mean {} must be > 0", s.mean)));
    }
    Ok(20.0 * (s.mean / s.sd).log10())
}

/// `(mean(sphere) - mean(bg)) / sd(bg)`. `sphere_mask` is expected to be the
/// eroded geometric mask.
pub fn cnr(vol: &Volume, sphere_mask: &Mask, bg_mask: &Mask) -> Result<f64> {
    if sphere_mask.count() == 0 {
        return Err(Error::SphereTooSmall);
    }
    let sp = roi_stats(vol, sphere_mask)?;
    let bg = roi_stats(vol, bg_mask)?;
    if bg.sd == 0.0 {
        return Err(Error::InvalidParameter("background sd is zero".into()));
    }
    Ok((sp.mean - bg.mean) / bg.sd)
}

/// Maximum voxel value inside a mask.
pub fn ac_max(vol: &Volume, mask: &Mask) -> Result<f64> {
    if mask.dims() != vol.dims() {
        return Err(Error::DimensionMismatch {
            expected: vol.dims(),
            found: mask.dims(),
        });
    }
    mask.select(vol).reduce(f64::max).ok_or(Error::EmptyMask)
}

pub fn percent_bias(ac_max_mean: f64, tac: f64) -> f64 {
    100.0 * (ac_max_mean - tac) / tac
}

/// Percent difference between two measurements relative to their mean.
pub fn percent_difference(high: f64, low: f64) -> f64 {
    200.0 * (high - low) / (high + low)
}

/// Coefficient of variation with the sample standard deviation.
pub fn cov(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter("cov needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::InvalidParameter("cov of zero-mean values".into()));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFitResult {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub residual_rms: f64,
}

const FIT_MAX_ITERATIONS: usize = 200;
const FIT_REL_TOL: f64 = 1e-8;

fn gaussian(p: &Vector3<f64>, x: f64) -> f64 {
    p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp()
}

fn sse(p: &Vector3<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - gaussian(p, x)).powi(2)).sum()
}

/// Least-squares fit of `A exp(-(x - mu)^2 / (2 sigma^2))`.
///
/// Starts from the sample moments and refines with Levenberg-Marquardt
/// (Gauss-Newton with adaptive damping) until the accepted step changes
/// every parameter by less than `1e-8` relative.
pub fn fit_gaussian_1d(xs: &[f64], ys: &[f64]) -> Result<GaussianFitResult> {
    if xs.len() != ys.len() || xs.len() < 5 {
        return Err(Error::InvalidParameter("gaussian fit needs >= 5 paired samples".into()));
    }
    if ys.iter().any(|&y| !(y >= 0.0)) {
        return Err(Error::InvalidParameter("gaussian fit needs nonnegative samples".into()));
    }
    let (imax, &amax) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if imax == 0 || imax == ys.len() - 1 || amax <= 0.0 {
        return Err(Error::InvalidParameter("gaussian fit needs a strict interior maximum".into()));
    }

    let total: f64 = ys.iter().sum();
    let mu0 = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / total;
    let var0 = xs.iter().zip(ys).map(|(x, y)| (x - mu0).powi(2) * y).sum::<f64>() / total;
    let min_step = xs.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);
    let sigma0 = var0.sqrt().max(0.5 * min_step);
    let mut p = Vector3::new(amax, mu0, sigma0);
    let mut cost = sse(&p, xs, ys);
    let mut lambda = 1e-3;

    for _ in 0..FIT_MAX_ITERATIONS {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&x, &y) in xs.iter().zip(ys) {
            let d = x - p[1];
            let e = (-(d * d) / (2.0 * p[2] * p[2])).exp();
            let j = Vector3::new(e, p[0] * e * d / (p[2] * p[2]), p[0] * e * d * d / p[2].powi(3));
            let r = y - p[0] * e;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut damped = jtj;
        for k in 0..3 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let step = match damped.lu().solve(&jtr) {
            Some(s) => s,
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let trial = p + step;
        let trial_cost = if trial[2] != 0.0 { sse(&trial, xs, ys) } else { f64::INFINITY };
        if trial_cost.is_finite() && trial_cost <= cost {
            let converged = (0..3).all(|k| step[k].abs() <= FIT_REL_TOL * trial[k].abs().max(1e-12));
            p = trial;
            cost = trial_cost;
            lambda = (lambda / 10.0).max(1e-12);
            if converged {
                return Ok(GaussianFitResult {
                    amplitude: p[0],
                    center: p[1],
                    sigma: p[2].abs(),
                    residual_rms: (cost / xs.len() as f64).sqrt(),
                });
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left: the current point is stationary
                return Ok(GaussianFitResult {
                    amplitude: p[0],
                    center: p[1],
                    sigma: p[2].abs(),
                    residual_rms: (cost / xs.len() as f64).sqrt(),
                });
            }
        }
    }
    Err(Error::FitNonConvergence {
        residual_rms: (cost / xs.len() as f64).sqrt(),
    })
}

/// Which edge to measure: a sphere (center, diameter in mm) and the axis of
/// the line profile through its center. The rising edge on the low side of
/// the axis is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeSpec {
    pub center: [f64; 3],
    pub diameter: f64,
    pub axis: Axis,
}

/// Resolution (FWHM, mm) from the rising edge of a sphere.
///
/// The profile through the sphere center is differenced with forward
/// differences, giving samples of the edge spread derivative at the
/// half-voxel midpoints. The peak is searched within half a radius of the
/// nominal edge, a window of half a radius around it is offset to its
/// minimum and fitted with a Gaussian. Forward differencing widens the
/// response by a unit box, whose variance `h^2 / 12` is removed from the
/// fitted variance.
pub fn resolution_fwhm(vol: &Volume, edge: &EdgeSpec) -> Result<f64> {
    let g = vol.geometry();
    let a = edge.axis.index();
    let h = g.spacing[a];
    let radius = 0.5 * edge.diameter;
    if edge.diameter < 4.0 * h {
        return Err(Error::InvalidParameter(format!(
            "sphere of {} mm spans fewer than 4 voxels along {:?}",
            edge.diameter, edge.axis
        )));
    }
    let others: Vec<usize> = (0..3).filter(|&k| k != a).collect();
    let axis_of = |k: usize| [Axis::X, Axis::Y, Axis::Z][k];
    let fixed = [
        g.nearest_index(axis_of(others[0]), edge.center[others[0]]),
        g.nearest_index(axis_of(others[1]), edge.center[others[1]]),
    ];
    let profile = line_profile(vol, edge.axis, fixed)?;

    let mids: Vec<f64> = profile.positions.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let grad: Vec<f64> = profile.values.windows(2).map(|w| ((w[1] - w[0]) / h).abs()).collect();

    let nominal = edge.center[a] - radius;
    let search: Vec<usize> = (0..mids.len())
        .filter(|&i| (mids[i] - nominal).abs() <= 0.5 * radius)
        .collect();
    let peak = *search
        .iter()
        .max_by(|&&i, &&j| grad[i].total_cmp(&grad[j]))
        .ok_or(Error::NoEdgePeak)?;
    let half = ((0.5 * radius / h).round() as usize).max(2);
    if peak < half || peak + half >= grad.len() {
        return Err(Error::NoEdgePeak);
    }
    let (mut lo, mut hi) = (peak - half, peak + half);
    // noise can put a larger sample on the window rim; trim until the maximum is interior
    loop {
        if hi - lo + 1 < 5 {
            return Err(Error::NoEdgePeak);
        }
        let top = (lo..=hi).max_by(|&i, &j| grad[i].total_cmp(&grad[j])).expect("non-empty");
        if top == lo {
            lo += 1;
        } else if top == hi {
            hi -= 1;
        } else {
            break;
        }
    }
    let xs = &mids[lo..=hi];
    let floor = grad[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
    let ys: Vec<f64> = grad[lo..=hi].iter().map(|v| v - floor).collect();
    let fit = fit_gaussian_1d(xs, &ys)?;
    let var = fit.sigma * fit.sigma - h * h / 12.0;
    if !(var > 0.0) {
        return Err(Error::NoEdgePeak);
    }
    Ok(FWHM_PER_SIGMA * var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn volume_with(values: &[f64]) -> (Volume, Mask) {
        let g = Geometry::new([values.len(), 1, 1], [1.0; 3]).unwrap();
        let v = Volume::new(g, values.to_vec()).unwrap();
        let m = Mask::from_vec([values.len(), 1, 1], vec![true; values.len()]).unwrap();
        (v, m)
    }

    #[test]
    fn snr_hand_cases() {
        // two points at 100 -+ d have sample sd d * sqrt(2)
        let d = 10.0 / 2f64.sqrt();
        let (v, m) = volume_with(&[100.0 - d, 100.0 + d]);
        assert!((snr_db(&v, &m).unwrap() - 20.0).abs() < 1e-9);
        let d = 100.0 / 2f64.sqrt();
        let (v, m) = volume_with(&[100.0 - d, 100.0 + d]);
        assert!(snr_db(&v, &m).unwrap().abs() < 1e-9);
        let (v, m) = volume_with(&[5.0; 4]);
        assert!(matches!(snr_db(&v, &m), Err(Error::InfiniteSnr)));
    }

    #[test]
    fn snr_scale_invariance() {
        let (v, m) = volume_with(&[80.0, 95.0, 103.0, 121.0, 99.0]);
        let a = snr_db(&v, &m).unwrap();
        for c in [1e-3, 0.7, 42.0, 1e4] {
            let b = snr_db(&v.map(|x| x * c).unwrap(), &m).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cnr_hand_cases() {
        let d = 10.0 / 2f64.sqrt();
        let g = Geometry::new([4, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::new(g, vec![200.0, 200.0, 100.0 - d, 100.0 + d]).unwrap();
        let sp = Mask::from_vec([4, 1, 1], vec![true, true, false, false]).unwrap();
        let bg = Mask::from_vec([4, 1, 1], vec![false, false, true, true]).unwrap();
        assert!((cnr(&v, &sp, &bg).unwrap() - 10.0).abs() < 1e-9);
        let v2 = Volume::new(g, vec![100.0, 100.0, 100.0 - d, 100.0 + d]).unwrap();
        assert_eq!(cnr(&v2, &sp, &bg).unwrap(), 0.0);
        assert!(matches!(cnr(&v, &Mask::empty([4, 1, 1]), &bg), Err(Error::SphereTooSmall)));
        // shift invariance
        let shifted = v.map(|x| x + 1234.5).unwrap();
        assert!((cnr(&shifted, &sp, &bg).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn bias_difference_cov() {
        assert!((percent_bias(120.0, 100.0) - 20.0).abs() < 1e-12);
        assert_eq!(percent_bias(100.0, 100.0), 0.0);
        assert_eq!(percent_bias(2775.0, 2775.0), 0.0);
        assert!((percent_bias(2775.0 * 0.9294, 2775.0) + 7.06).abs() < 1e-9);
        assert!((percent_difference(110.0, 90.0) - 20.0).abs() < 1e-12);
        assert_eq!(percent_difference(5.0, 5.0), 0.0);
        assert!((percent_difference(3.0, 1.0) - 100.0).abs() < 1e-12);
        assert!((percent_difference(7.0, 3.0) - percent_difference(3.0, 7.0).abs()).abs() < 1e-12);
        assert!((percent_difference(7e3, 3e3) - percent_difference(7.0, 3.0)).abs() < 1e-12);
        assert_eq!(cov(&[10.0, 10.0, 10.0]).unwrap(), 0.0);
        assert!((cov(&[9.0, 11.0]).unwrap() - 2f64.sqrt() / 10.0).abs() < 1e-12);
        assert!(cov(&[1.0]).is_err());
    }

    #[test]
    fn ac_max_over_mask() {
        let (v, _) = volume_with(&[1.0, 7.0, 3.0, 9.0]);
        let m = Mask::from_vec([4, 1, 1], vec![true, true, true, false]).unwrap();
        assert_eq!(ac_max(&v, &m).unwrap(), 7.0);
        assert!(ac_max(&v, &Mask::empty([4, 1, 1])).is_err());
    }

    fn sampled_gaussian(a: f64, mu: f64, sigma: f64) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (-10..=10).map(|i| i as f64).collect();
        let ys = xs.iter().map(|x| a * (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        (xs, ys)
    }

    #[test]
    fn fit_exact_gaussian() {
        let (xs, ys) = sampled_gaussian(1.0, 0.0, 2.0);
        let f = fit_gaussian_1d(&xs, &ys).unwrap();
        assert!((f.amplitude - 1.0).abs() < 1e-6);
        assert!(f.center.abs() < 1e-6);
        assert!((f.sigma - 2.0).abs() < 1e-6);
        assert!(f.residual_rms < 1e-8);
    }

    #[test]
    fn fit_after_offset_removal() {
        let (xs, ys) = sampled_gaussian(3.0, 0.7, 2.0);
        let shifted: Vec<f64> = ys.iter().map(|y| y + 5.0).collect();
        let floor = shifted.iter().cloned().fold(f64::INFINITY, f64::min);
        let pre: Vec<f64> = shifted.iter().map(|y| y - floor).collect();
        let f = fit_gaussian_1d(&xs, &pre).unwrap();
        assert!((f.sigma - 2.0).abs() < 1e-3 && (f.center - 0.7).abs() < 1e-3);
    }

    #[test]
    fn fit_with_one_percent_noise() {
        let (xs, ys) = sampled_gaussian(1.0, 0.0, 2.0);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<f64> = ys.iter().map(|y| (y + noise.sample(&mut rng)).max(0.0)).collect();
            let f = fit_gaussian_1d(&xs, &noisy).unwrap();
            assert!((f.sigma - 2.0).abs() / 2.0 < 0.05, "seed {seed}: {}", f.sigma);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_gaussian_1d(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).is_err());
        let xs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert!(fit_gaussian_1d(&xs, &[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]).is_err());
        assert!(fit_gaussian_1d(&xs, &[0.0, 1.0, -2.0, 2.0, 1.0, 0.0]).is_err());
    }

    /// Erf-blurred step edge rising at `center - diameter / 2` along x.
    pub(crate) fn erf_edge_volume(sigma: f64, edge_at: f64) -> Volume {
        let g = Geometry::new([120, 3, 3], [1.0; 3]).unwrap();
        Volume::from_fn(g, |x, _, _| {
            let t = (x as f64 - edge_at) / (sigma * 2f64.sqrt());
            100.0 + 400.0 * 0.5 * (1.0 + statrs::function::erf::erf(t))
        })
    }

    #[test]
    fn resolution_on_erf_edges() {
        for (sigma, offset) in [(2.0, 0.0), (1.0, 0.3), (1.0, 0.5), (3.0, 0.25), (4.0, 0.8)] {
            let edge_at = 40.0 + offset;
            let v = erf_edge_volume(sigma, edge_at);
            let e = EdgeSpec { center: [edge_at + 20.0, 1.0, 1.0], diameter: 40.0, axis: Axis::X };
            let fwhm = resolution_fwhm(&v, &e).unwrap();
            let expected = FWHM_PER_SIGMA * sigma;
            assert!((fwhm - expected).abs() / expected < 0.05, "sigma {sigma}: {fwhm} vs {expected}");
        }
        let a = resolution_fwhm(&erf_edge_volume(2.0, 40.0), &EdgeSpec { center: [60.0, 1.0, 1.0], diameter: 40.0, axis: Axis::X }).unwrap();
        let b = resolution_fwhm(&erf_edge_volume(1.0, 40.0), &EdgeSpec { center: [60.0, 1.0, 1.0], diameter: 40.0, axis: Axis::X }).unwrap();
        assert!((a / b - 2.0).abs() / 2.0 < 0.05);
        assert!((a - 4.71).abs() / 4.71 < 0.05);
    }

    #[test]
    fn resolution_without_edge_fails() {
        let g = Geometry::new([60, 3, 3], [1.0; 3]).unwrap();
        let flat = Volume::filled(g, 10.0);
        let e = EdgeSpec { center: [40.0, 1.0, 1.0], diameter: 30.0, axis: Axis::X };
        assert!(resolution_fwhm(&flat, &e).is_err());
    }
}
