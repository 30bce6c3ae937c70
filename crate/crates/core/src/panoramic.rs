//! Panoramic radiograph synthesis by ray integration along the arch.
//!
//! Column `u` of the image covers arc length `[u, u+1) * mm_per_px` of the
//! arch; its ray runs along the buccal normal at the column centre, through
//! a focal trough of fixed depth centred on the arch. Row `v` sits at
//! height `z_top - (v + 1/2) * mm_per_px`. Pixel values are trapezoidal
//! integrals (in mm) of the trilinearly interpolated attenuation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_pgm16, read_pgm8, write_pgm16, write_pgm8};
use crate::geom::{GridSpec, LabelVolume, VoxelGrid, MASK_CHANNELS};
use crate::synth::ArchCurve;

/// Grey-level image, row-major, non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::SizeMismatch { left: pixels.len(), right: height * width });
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image size {height}x{width}")));
        }
        if let Some(p) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidArgument(format!("image pixel {p} is negative or non-finite")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.pixels[v * self.width + u]
    }

    /// `(row, column)` of the brightest pixel, first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &p) in self.pixels.iter().enumerate() {
            if p > self.pixels[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        write_pgm16(path, self.width, self.height, &self.pixels).map(|_| ())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let (w, h, px) = read_pgm16(path)?;
        // Quantization can leave tiny negative round-off below the minimum.
        Self::new(h, w, px.into_iter().map(|p| p.max(0.0)).collect())
    }
}

/// `MASK_CHANNELS x H x W` per-channel values in `[0, 1]`; channels are
/// independent (a pixel may belong to several teeth).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MultiLabelMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != MASK_CHANNELS * height * width {
            return Err(Error::SizeMismatch { left: data.len(), right: MASK_CHANNELS * height * width });
        }
        if let Some(p) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("mask value {p} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; MASK_CHANNELS * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, v: usize, u: usize) -> f64 {
        self.data[(c * self.height + v) * self.width + u]
    }

    fn set(&mut self, c: usize, v: usize, u: usize, x: f64) {
        self.data[(c * self.height + v) * self.width + u] = x;
    }

    /// Channels thresholded at `tau` (value `>= tau` becomes 1).
    pub fn binarized(&self, tau: f64) -> Self {
        let data = self.data.iter().map(|&p| if p >= tau { 1.0 } else { 0.0 }).collect();
        Self { height: self.height, width: self.width, data }
    }

    /// Writes `dir/<channel>.pgm`, 8-bit, value * 255 rounded.
    pub fn save_pgm_dir(&self, dir: &Path) -> Result<()> {
        for c in 0..MASK_CHANNELS {
            let bytes: Vec<u8> = self.channel(c).iter().map(|&p| (p * 255.0).round() as u8).collect();
            write_pgm8(&dir.join(format!("{c}.pgm")), self.width, self.height, &bytes)?;
        }
        Ok(())
    }

    pub fn load_pgm_dir(dir: &Path) -> Result<Self> {
        let mut data = Vec::new();
        let mut size = None;
        for c in 0..MASK_CHANNELS {
            let path = dir.join(format!("{c}.pgm"));
            let (w, h, bytes) = read_pgm8(&path)?;
            if *size.get_or_insert((w, h)) != (w, h) {
                return Err(Error::format(&path, "mask channels differ in size"));
            }
            data.extend(bytes.into_iter().map(|b| b as f64 / 255.0));
        }
        let (w, h) = size.expect("at least one channel");
        Self::new(h, w, data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionGeometry {
    pub arch: ArchCurve,
    /// Total ray length through the focal trough, centred on the arch (mm).
    pub focal_depth: f64,
    pub mm_per_px: f64,
    pub width: usize,
    pub height: usize,
    /// Height of the top edge of row 0 (mm).
    pub z_top: f64,
    /// Quadrature step along each ray (mm).
    pub step: f64,
}

/// Serializable part of a projection geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionParams {
    pub focal_depth: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self { focal_depth: 20.0 }
    }
}

impl ProjectionGeometry {
    /// 1:1 geometry for a volume: one pixel per voxel spacing on both axes,
    /// one row per voxel layer (row centres at voxel centres), quadrature
    /// at half-voxel steps.
    pub fn for_volume(arch: &ArchCurve, spec: &GridSpec, focal_depth: f64) -> Result<Self> {
        let mm = spec.spacing;
        let width = (arch.length() / mm).floor() as usize;
        let geom = Self {
            arch: arch.clone(),
            focal_depth,
            mm_per_px: mm,
            width,
            height: spec.dims[2],
            z_top: spec.origin[2] + spec.dims[2] as f64 * mm,
            step: mm / 2.0,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidArgument(format!(
                "panoramic image {}x{} is smaller than 8x8",
                self.height, self.width
            )));
        }
        for (name, v) in [("focal_depth", self.focal_depth), ("mm_per_px", self.mm_per_px), ("step", self.step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Arc length at the centre of column `u`.
    pub fn column_arclength(&self, u: f64) -> f64 {
        (u + 0.5) * self.mm_per_px
    }

    /// Height at the centre of row `v`.
    pub fn row_height(&self, v: f64) -> f64 {
        self.z_top - (v + 0.5) * self.mm_per_px
    }

    /// Column containing arc length `l` (may be out of range).
    pub fn column_of_arclength(&self, l: f64) -> f64 {
        (l / self.mm_per_px).floor()
    }

    /// Row containing height `z` (may be out of range).
    pub fn row_of_height(&self, z: f64) -> f64 {
        ((self.z_top - z) / self.mm_per_px).floor()
    }

    /// Continuous pixel coordinates `(u, v)` to the arch parameter and
    /// height of that point; pixel centres sit at half-integers.
    pub fn pixel_to_arch(&self, u: f64, v: f64) -> (f64, f64) {
        let t = self.arch.t_at_arclength(u * self.mm_per_px);
        (t, self.z_top - v * self.mm_per_px)
    }

    fn samples(&self) -> Vec<(f64, f64)> {
        let m = (self.focal_depth / self.step).round().max(1.0) as usize;
        let h = self.focal_depth / m as f64;
        (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { h / 2.0 } else { h };
                (-self.focal_depth / 2.0 + i as f64 * h, w)
            })
            .collect()
    }
}

/// Trilinear footprint of one ray sample in the horizontal plane.
struct Footprint {
    /// `(i, j, weight)` of in-grid corners with positive weight.
    corners: Vec<(usize, usize, f64)>,
    quad_weight: f64,
}

fn axis_corners(x: f64, origin: f64, spacing: f64, n: usize) -> [(Option<usize>, f64); 2] {
    let f = (x - origin) / spacing - 0.5;
    let i0 = f.floor();
    let frac = f - i0;
    let idx = |i: f64| if i >= 0.0 && i < n as f64 { Some(i as usize) } else { None };
    [(idx(i0), 1.0 - frac), (idx(i0 + 1.0), frac)]
}

fn column_footprints(geom: &ProjectionGeometry, spec: &GridSpec, u: usize) -> Vec<Footprint> {
    let t = geom.arch.t_at_arclength(geom.column_arclength(u as f64));
    let c = geom.arch.point(t);
    let n = geom.arch.normal(t);
    geom.samples()
        .into_iter()
        .map(|(off, quad_weight)| {
            let (x, y) = (c.x + off * n.x, c.y + off * n.y);
            let cx = axis_corners(x, spec.origin[0], spec.spacing, spec.dims[0]);
            let cy = axis_corners(y, spec.origin[1], spec.spacing, spec.dims[1]);
            let mut corners = Vec::with_capacity(4);
            for (i, wx) in cx {
                for (j, wy) in cy {
                    if let (Some(i), Some(j)) = (i, j) {
                        if wx * wy > 0.0 {
                            corners.push((i, j, wx * wy));
                        }
                    }
                }
            }
            Footprint { corners, quad_weight }
        })
        .collect()
}

fn row_corners(geom: &ProjectionGeometry, spec: &GridSpec, v: usize) -> Vec<(usize, f64)> {
    let z = geom.row_height(v as f64);
    axis_corners(z, spec.origin[2], spec.spacing, spec.dims[2])
        .into_iter()
        .filter_map(|(k, w)| k.filter(|_| w > 0.0).map(|k| (k, w)))
        .collect()
}

fn check_coverage(footprints: &[Vec<Footprint>], rows: &[Vec<(usize, f64)>]) -> Result<()> {
    let any_xy = footprints.iter().flatten().any(|f| !f.corners.is_empty());
    let any_z = rows.iter().any(|r| !r.is_empty());
    if !(any_xy && any_z) {
        return Err(Error::InvalidArgument("projection geometry lies entirely outside the volume".into()));
    }
    Ok(())
}

/// Panoramic image of an attenuation volume.
pub fn panoramic_project(volume: &VoxelGrid, geom: &ProjectionGeometry) -> Result<Image2D> {
    geom.validate()?;
    let spec = volume.spec();
    let footprints: Vec<Vec<Footprint>> = (0..geom.width).map(|u| column_footprints(geom, spec, u)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..geom.height).map(|v| row_corners(geom, spec, v)).collect();
    check_coverage(&footprints, &rows)?;
    let vals = volume.values();
    let mut pixels = vec![0.0; geom.width * geom.height];
    for (u, fps) in footprints.iter().enumerate() {
        for (v, zc) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for fp in fps {
                let mut s = 0.0;
                for &(i, j, wxy) in &fp.corners {
                    for &(k, wz) in zc {
                        s += wxy * wz * vals[spec.index(i, j, k)] as f64;
                    }
                }
                acc += fp.quad_weight * s;
            }
            pixels[v * geom.width + u] = acc;
        }
    }
    Image2D::new(geom.height, geom.width, pixels)
}

/// Ground-truth masks: tooth channel `k` is 1 where the ray touches (with
/// positive interpolation weight) at least one voxel labelled `k`;
/// channel 0 is 1 where no tooth channel is.
pub fn project_labels(labels: &LabelVolume, geom: &ProjectionGeometry) -> Result<MultiLabelMask> {
    geom.validate()?;
    let spec = labels.spec();
    let footprints: Vec<Vec<Footprint>> = (0..geom.width).map(|u| column_footprints(geom, spec, u)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..geom.height).map(|v| row_corners(geom, spec, v)).collect();
    check_coverage(&footprints, &rows)?;
    let lab = labels.labels();
    let mut mask = MultiLabelMask::zeros(geom.height, geom.width);
    let mut hit = [false; MASK_CHANNELS];
    for (u, fps) in footprints.iter().enumerate() {
        for (v, zc) in rows.iter().enumerate() {
            hit.fill(false);
            for fp in fps {
                for &(i, j, _) in &fp.corners {
                    for &(k, _) in zc {
                        hit[lab[spec.index(i, j, k)] as usize] = true;
                    }
                }
            }
            let mut any = false;
            for (c, &h) in hit.iter().enumerate().skip(1) {
                if h {
                    mask.set(c, v, u, 1.0);
                    any = true;
                }
            }
            if !any {
                mask.set(0, v, u, 1.0);
            }
        }
    }
    Ok(mask)
}
