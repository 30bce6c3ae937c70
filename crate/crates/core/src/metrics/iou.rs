//! Voxel IoU between point clouds.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{voxelize, Bounds, PointCloud};

/// Voxel padding on every side of the union bounding box.
pub const IOU_PAD_VOXELS: f64 = 2.0;

/// Both clouds voxelized at `spacing` over their union bounding box padded
/// by two voxels; `|pred and gt| / |pred or gt|`.
///
/// The box is snapped outward to multiples of `spacing`, so a point's voxel
/// does not depend on the other points.
pub fn cloud_iou(pred: &PointCloud, gt: &PointCloud, spacing: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if pred.frame() != gt.frame() {
        return Err(Error::InvalidArgument("IoU needs both clouds in the same frame".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("IoU spacing must be > 0, got {spacing}")));
    }
    let (mut lo, mut hi) = pred.extent();
    let (glo, ghi) = gt.extent();
    lo = lo.inf(&glo);
    hi = hi.sup(&ghi);
    let pad = Vector3::repeat(IOU_PAD_VOXELS * spacing);
    let snap_lo = (lo - pad).map(|v| (v / spacing).floor() * spacing);
    let snap_hi = (hi + pad).map(|v| (v / spacing).ceil() * spacing);
    let bounds = Bounds::new(snap_lo, snap_hi)?;
    let a = voxelize(pred, spacing, &bounds)?;
    let b = voxelize(gt, spacing, &bounds)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x > 0.0, y > 0.0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(inter as f64 / union as f64)
}
