//! In-plane Gaussian smoothing, central-difference gradients and the
//! orientation-coherence field used by the GVOF diffusivity.

use crate::error::{Error, Result};
use crate::volume::Slice;

/// FWHM = `FWHM_PER_SIGMA` * sigma for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Normalized 1D Gaussian taps for a kernel of the given FWHM, `2r + 1` long.
///
/// The radius is `ceil(3 sigma)` in voxels and never less than one.
pub fn gaussian_kernel_1d(fwhm_mm: f64, spacing_mm: f64) -> Result<Vec<f64>> {
    if !(fwhm_mm.is_finite() && fwhm_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("kernel fwhm {fwhm_mm}")));
    }
    if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("kernel spacing {spacing_mm}")));
    }
    let sigma = fwhm_mm / FWHM_PER_SIGMA / spacing_mm;
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let r = radius as i64;
    let mut w: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Convolves along a strided line with replicated edge values.
///
/// `get(i)` reads the i-th sample along the line, `n` is the line length.
#[inline]
fn convolve_line(n: usize, kernel: &[f64], get: impl Fn(usize) -> f64, out: &mut [f64]) {
    let r = (kernel.len() / 2) as i64;
    let last = n as i64 - 1;
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let j = (i as i64 + t as i64 - r).clamp(0, last) as usize;
            acc += w * get(j);
        }
        *o = acc;
    }
}

/// Convolves every row (x direction) of a slice.
pub fn convolve_x(slice: &Slice, kernel: &[f64]) -> Slice {
    let mut out = slice.clone();
    let nx = slice.nx;
    for y in 0..slice.ny {
        let row = &slice.data[y * nx..(y + 1) * nx];
        convolve_line(nx, kernel, |i| row[i], &mut out.data[y * nx..(y + 1) * nx]);
    }
    out
}

/// Convolves every column (y direction) of a slice.
pub fn convolve_y(slice: &Slice, kernel: &[f64]) -> Slice {
    let mut out = slice.clone();
    let (nx, ny) = (slice.nx, slice.ny);
    let mut col = vec![0.0; ny];
    for x in 0..nx {
        convolve_line(ny, kernel, |j| slice.data[j * nx + x], &mut col);
        for (y, v) in col.iter().enumerate() {
            out.data[y * nx + x] = *v;
        }
    }
    out
}

/// Separable Gaussian smoothing, x pass then y pass, each axis with its own spacing.
pub fn gaussian_smooth_slice(slice: &Slice, fwhm_mm: f64) -> Result<Slice> {
    let kx = gaussian_kernel_1d(fwhm_mm, slice.spacing[0])?;
    let ky = gaussian_kernel_1d(fwhm_mm, slice.spacing[1])?;
    Ok(convolve_y(&convolve_x(slice, &kx), &ky))
}

/// Separable convolution of a 3D buffer (x-fastest) along `axis` with replicate borders.
pub(crate) fn convolve_3d_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let n = dims[axis];
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let coord = [x, y, z];
                if coord[axis] != 0 {
                    continue;
                }
                let base = (z * ny + y) * nx + x;
                convolve_line(n, kernel, |i| data[base + i * stride], &mut line);
                for (i, v) in line.iter().enumerate() {
                    out[base + i * stride] = *v;
                }
            }
        }
    }
    out
}

/// Per-pixel gradient of one slice plus its magnitude.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub nx: usize,
    pub ny: usize,
    pub spacing: [f64; 2],
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

#[inline]
fn diff_1d(n: usize, h: f64, i: usize, get: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        (get(1) - get(0)) / h
    } else if i == n - 1 {
        (get(n - 1) - get(n - 2)) / h
    } else {
        (get(i + 1) - get(i - 1)) / (2.0 * h)
    }
}

/// Central differences in the interior, one-sided differences on the border.
pub fn gradient_2d(slice: &Slice, spacing: [f64; 2]) -> Result<GradientField> {
    let (nx, ny) = (slice.nx, slice.ny);
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidParameter(format!(
            "gradient needs a slice of at least 3x3, got {nx}x{ny}"
        )));
    }
    let n = nx * ny;
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    let mut magnitude = Vec::with_capacity(n);
    let d = &slice.data;
    for y in 0..ny {
        for x in 0..nx {
            let ax = diff_1d(nx, spacing[0], x, |i| d[y * nx + i]);
            let ay = diff_1d(ny, spacing[1], y, |j| d[j * nx + x]);
            gx.push(ax);
            gy.push(ay);
            magnitude.push(ax.hypot(ay));
        }
    }
    Ok(GradientField {
        nx,
        ny,
        spacing,
        gx,
        gy,
        magnitude,
    })
}

/// Sum over a `p x q` window of the cosine between each pixel's gradient and
/// its neighbours'. The window is clipped at the border; pixels whose
/// gradient magnitude is negligible (below `1e-12` of the slice maximum)
/// contribute zero, and a negligible center yields zero.
pub fn orientation_sum(gf: &GradientField, window: (usize, usize)) -> Result<Vec<f64>> {
    let (p, q) = window;
    if p == 0 || q == 0 || p % 2 == 0 || q % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "orientation window extents must be odd, got {p}x{q}"
        )));
    }
    let (nx, ny) = (gf.nx, gf.ny);
    let max_mag = gf.magnitude.iter().cloned().fold(0.0, f64::max);
    let eps = if max_mag > 0.0 { 1e-12 * max_mag } else { 1e-300 };

    let mut ux = vec![0.0; nx * ny];
    let mut uy = vec![0.0; nx * ny];
    for i in 0..nx * ny {
        let m = gf.magnitude[i];
        if m >= eps {
            ux[i] = gf.gx[i] / m;
            uy[i] = gf.gy[i] / m;
        }
    }

    let (hx, hy) = (p / 2, q / 2);
    let mut raw = vec![0.0; nx * ny];
    for y in 0..ny {
        let (y0, y1) = (y.saturating_sub(hy), (y + hy).min(ny - 1));
        for x in 0..nx {
            let c = y * nx + x;
            if gf.magnitude[c] < eps {
                continue;
            }
            let (x0, x1) = (x.saturating_sub(hx), (x + hx).min(nx - 1));
            let mut acc = 0.0;
            for j in y0..=y1 {
                for i in x0..=x1 {
                    let k = j * nx + i;
                    acc += ux[c] * ux[k] + uy[c] * uy[k];
                }
            }
            raw[c] = acc;
        }
    }
    Ok(raw)
}

/// Orientation coherence in `[0, 1]` for one slice.
#[derive(Clone, Debug)]
pub struct CoherenceField {
    pub nx: usize,
    pub ny: usize,
    pub window: (usize, usize),
    pub alpha: Vec<f64>,
}

/// Min-max rescale to `[0, 1]`. A (near-)constant field maps to all ones.
pub fn normalize_minmax(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = crate::volume::min_max(raw);
    let range = hi - lo;
    if raw.is_empty() || range < 1e-12 * hi.abs().max(1.0) {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect()
}

pub fn coherence_field(gf: &GradientField, window: (usize, usize)) -> Result<CoherenceField> {
    let raw = orientation_sum(gf, window)?;
    Ok(CoherenceField {
        nx: gf.nx,
        ny: gf.ny,
        window,
        alpha: normalize_minmax(&raw),
    })
}
