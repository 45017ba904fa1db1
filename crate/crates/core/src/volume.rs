//! Volumes, slices, masks and the region primitives built on them.
//!
//! Storage order is x-fastest, then y, then z. Voxel `(i, j, k)` has its
//! center at `(i * sx, j * sy, k * sz)` millimetres.

use crate::error::{Error, Result};

/// Voxel counts and physical spacing of a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be finite and > 0, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Voxel volume in millilitres (1 ml = 1000 mm^3).
    pub fn voxel_volume_ml(&self) -> f64 {
        self.spacing.iter().product::<f64>() / 1000.0
    }

    /// Physical position of a voxel center in mm.
    #[inline]
    pub fn position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            x as f64 * self.spacing[0],
            y as f64 * self.spacing[1],
            z as f64 * self.spacing[2],
        ]
    }

    /// Nearest voxel index along `axis` for a physical coordinate, clamped to the grid.
    pub fn nearest_index(&self, axis: Axis, mm: f64) -> usize {
        let a = axis.index();
        let i = (mm / self.spacing[a]).round();
        i.clamp(0.0, (self.dims[a] - 1) as f64) as usize
    }

    /// Physical extent `[lo, hi]` per axis, voxel faces included.
    pub fn extent(&self) -> [[f64; 2]; 3] {
        let mut e = [[0.0; 2]; 3];
        for a in 0..3 {
            e[a] = [
                -0.5 * self.spacing[a],
                (self.dims[a] as f64 - 0.5) * self.spacing[a],
            ];
        }
        e
    }
}

/// A single in-plane slice. Index `(x, y)` lives at `y * nx + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub nx: usize,
    pub ny: usize,
    pub spacing: [f64; 2],
    pub data: Vec<f64>,
}

impl Slice {
    pub fn new(nx: usize, ny: usize, spacing: [f64; 2], data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGeometry("slice dims must be >= 1".into()));
        }
        if data.len() != nx * ny {
            return Err(Error::InvalidGeometry(format!(
                "slice data length {} != {nx}x{ny}",
                data.len()
            )));
        }
        Ok(Self { nx, ny, spacing, data })
    }

    pub fn filled(nx: usize, ny: usize, spacing: [f64; 2], value: f64) -> Self {
        Self {
            nx,
            ny,
            spacing,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        spacing: [f64; 2],
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                data.push(f(x, y));
            }
        }
        Self { nx, ny, spacing, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.nx + x]
    }

    pub fn same_shape(&self, other: &Slice) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// A scalar activity grid with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} != {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at index {i}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        Self {
            geometry,
            data: vec![value; geometry.len()],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geometry, data }
    }

    /// Reassembles a volume from its z-slices.
    pub fn from_slices(geometry: Geometry, slices: Vec<Slice>) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        if slices.len() != nz || slices.iter().any(|s| s.nx != nx || s.ny != ny) {
            return Err(Error::InvalidGeometry("slices do not match geometry".into()));
        }
        let mut data = Vec::with_capacity(geometry.len());
        for s in slices {
            data.extend_from_slice(&s.data);
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> Slice {
        let [nx, ny, _] = self.geometry.dims;
        let start = z * nx * ny;
        Slice {
            nx,
            ny,
            spacing: [self.geometry.spacing[0], self.geometry.spacing[1]],
            data: self.data[start..start + nx * ny].to_vec(),
        }
    }

    pub fn slices(&self) -> Vec<Slice> {
        (0..self.geometry.dims[2]).map(|z| self.slice(z)).collect()
    }

    /// Applies `f` voxel-wise. Non-finite results are rejected.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume> {
        Volume::new(self.geometry, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub(crate) fn min_max(data: &[f64]) -> (f64, f64) {
    data.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Boolean voxel membership over a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidGeometry("mask length does not match dims".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Values of `vol` at masked voxels, in storage order.
    pub fn select<'a>(&'a self, vol: &'a Volume) -> impl Iterator<Item = f64> + 'a {
        self.data
            .iter()
            .zip(vol.data())
            .filter_map(|(&m, &v)| m.then_some(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Samples along one axis: positions in mm and the matching values.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn new(positions: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if positions.len() != values.len() {
            return Err(Error::InvalidParameter("profile lengths differ".into()));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "profile positions must be strictly increasing".into(),
            ));
        }
        Ok(Self { positions, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Voxels whose centers lie within `diameter / 2` of `center` (mm).
pub fn sphere_mask(geometry: &Geometry, center: [f64; 3], diameter: f64) -> Result<Mask> {
    if !(diameter.is_finite() && diameter > 0.0) {
        return Err(Error::InvalidParameter(format!("sphere diameter {diameter}")));
    }
    let r = diameter / 2.0;
    let extent = geometry.extent();
    for a in 0..3 {
        if center[a] + r < extent[a][0] || center[a] - r > extent[a][1] {
            return Err(Error::SphereOutsideGrid);
        }
    }

    let mut mask = Mask::empty(geometry.dims);
    let r2 = r * r;
    let range = |a: usize| {
        let s = geometry.spacing[a];
        let lo = ((center[a] - r) / s).ceil().max(0.0) as usize;
        let hi = ((center[a] + r) / s).floor().min((geometry.dims[a] - 1) as f64);
        (lo, hi)
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let (z0, z1) = range(2);
    if x1 < 0.0 || y1 < 0.0 || z1 < 0.0 {
        return Err(Error::EmptyMask);
    }
    for z in z0..=z1 as usize {
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let p = geometry.position(x, y, z);
                let d2 = (p[0] - center[0]).powi(2)
                    + (p[1] - center[1]).powi(2)
                    + (p[2] - center[2]).powi(2);
                if d2 <= r2 {
                    mask.set(x, y, z, true);
                }
            }
        }
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Per-slice erosion with a full 3x3 element; out-of-bounds neighbours are false.
pub fn erode_mask_2d(mask: &Mask) -> Mask {
    let [nx, ny, nz] = mask.dims;
    let mut out = Mask::empty(mask.dims);
    if nx < 3 || ny < 3 {
        return out;
    }
    for z in 0..nz {
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let keep = (y - 1..=y + 1)
                    .all(|yy| (x - 1..=x + 1).all(|xx| mask.get(xx, yy, z)));
                if keep {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// 3x3x3 dilation (26-neighbourhood), clipped at the grid border.
pub fn dilate_mask(mask: &Mask) -> Mask {
    let [nx, ny, nz] = mask.dims;
    let mut out = mask.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) {
                    continue;
                }
                for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                    for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                            out.set(xx, yy, zz, true);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Every voxel along `axis`; `fixed` holds the two remaining indices in x, y, z order.
pub fn line_profile(vol: &Volume, axis: Axis, fixed: [usize; 2]) -> Result<Profile> {
    let [nx, ny, nz] = vol.dims();
    let (n, (lim_a, lim_b)) = match axis {
        Axis::X => (nx, (ny, nz)),
        Axis::Y => (ny, (nx, nz)),
        Axis::Z => (nz, (nx, ny)),
    };
    if fixed[0] >= lim_a || fixed[1] >= lim_b {
        return Err(Error::IndexOutOfRange(format!(
            "fixed indices {fixed:?} outside ({lim_a}, {lim_b}) for axis {axis:?}"
        )));
    }
    let s = vol.spacing()[axis.index()];
    let positions = (0..n).map(|i| i as f64 * s).collect();
    let values = (0..n)
        .map(|i| match axis {
            Axis::X => vol.get(i, fixed[0], fixed[1]),
            Axis::Y => vol.get(fixed[0], i, fixed[1]),
            Axis::Z => vol.get(fixed[0], fixed[1], i),
        })
        .collect();
    Profile::new(positions, values)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Mean and sample standard deviation (n - 1 divisor) over masked voxels.
pub fn roi_stats(vol: &Volume, mask: &Mask) -> Result<RoiStats> {
    if mask.dims() != vol.dims() {
        return Err(Error::DimensionMismatch {
            expected: vol.dims(),
            found: mask.dims(),
        });
    }
    // Welford
    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in mask.select(vol) {
        count += 1;
        let delta = v - mean;
        mean += delta / count as f64;
        m2 += delta * (v - mean);
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let sd = if count > 1 {
        (m2 / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RoiStats { mean, sd, count })
}
