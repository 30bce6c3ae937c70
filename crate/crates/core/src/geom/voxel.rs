//! Regular voxel grids: attenuation/occupancy values and tooth labels.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Bounds {
    pub fn new(lo: Vector3<f64>, hi: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|a| !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite()) {
            return Err(Error::InvalidArgument(format!("empty or invalid bounds {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

/// Placement of a grid in space: voxel `(i, j, k)` covers
/// `origin + [i, i+1) * spacing` along each axis (origin is the outer corner).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!("grid spacing must be > 0, got {spacing}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
            self.origin[2] + (k as f64 + 0.5) * self.spacing,
        )
    }

    pub fn bounds(&self) -> Bounds {
        let lo = Vector3::from(self.origin);
        let size = Vector3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.spacing;
        Bounds { lo, hi: lo + size }
    }

    /// Voxel containing `p` under half-open binning, if any.
    pub fn locate(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.spacing).floor();
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }
}

/// Scalar field on a grid: attenuation in `[0, 1]` or occupancy `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { values: vec![0.0; spec.len()], spec }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SizeMismatch { left: values.len(), right: spec.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("voxel values".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.spec.index(i, j, k);
        self.values[idx] = v;
    }

    /// Number of voxels with a non-zero value.
    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn occupied_indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| self.spec.unindex(i))
    }
}

/// Per-voxel tooth labels: 0 background, 1..=32 tooth channels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    spec: GridSpec,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { labels: vec![0; spec.len()], spec }
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != spec.len() {
            return Err(Error::SizeMismatch { left: labels.len(), right: spec.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > super::fdi::TOOTH_CHANNELS) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..=32")));
        }
        Ok(Self { spec, labels })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.spec.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u8) {
        let idx = self.spec.index(i, j, k);
        self.labels[idx] = label;
    }

    /// Voxel count per label, indexed 0..=32.
    pub fn histogram(&self) -> [usize; super::fdi::MASK_CHANNELS] {
        let mut h = [0usize; super::fdi::MASK_CHANNELS];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Binary 0/1 grid of one label.
    pub fn indicator(&self, label: u8) -> VoxelGrid {
        VoxelGrid {
            spec: self.spec,
            values: self.labels.iter().map(|&l| if l == label { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Occupancy grid over `bounds`: a voxel is 1 iff at least one point falls
/// in it. Points on or beyond the upper bound are rejected.
pub fn voxelize(cloud: &PointCloud, spacing: f64, bounds: &Bounds) -> Result<VoxelGrid> {
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        *d = (((bounds.hi[a] - bounds.lo[a]) / spacing).ceil() as usize).max(1);
    }
    let spec = GridSpec::new(dims, spacing, [bounds.lo.x, bounds.lo.y, bounds.lo.z])?;
    let mut grid = VoxelGrid::zeros(spec);
    for p in cloud.points() {
        if !bounds.contains(p) {
            return Err(Error::OutOfBounds { point: [p.x, p.y, p.z] });
        }
        let [i, j, k] = spec
            .locate(p)
            .ok_or(Error::OutOfBounds { point: [p.x, p.y, p.z] })?;
        grid.set(i, j, k, 1.0);
    }
    Ok(grid)
}
