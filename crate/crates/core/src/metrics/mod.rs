//! Evaluation metrics: voxel IoU, Chamfer distance and EMD per tooth, plus
//! aggregation into mean ± std tables overall and per FDI class.
//!
//! ```
//! use toothrecon::geom::{Frame, PointCloud};
//! use toothrecon::metrics::{chamfer_distance, emd};
//!
//! let a = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]], Frame::Canonical).unwrap();
//! let b = PointCloud::from_arrays(&[[1.0, 0.0, 0.0]], Frame::Canonical).unwrap();
//! assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
//! assert_eq!(emd(&a, &b).unwrap(), 1.0);
//! ```

mod assignment;
mod chamfer;
mod iou;
mod report;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use assignment::{auction, hungarian, Assignment, AuctionResult};
pub use chamfer::{chamfer_brute_force, chamfer_distance};
pub use iou::{cloud_iou, IOU_PAD_VOXELS};
pub use report::{aggregate, FdiRow, MethodReport, Report, Stat, ToothResult, CD_SCALE, EMD_SCALE};

use crate::error::{Error, Result};
use crate::geom::{FdiTooth, PointCloud};
use crate::seeding::derive_seed;

/// Largest size solved exactly by [`hungarian`].
pub const EXACT_EMD_LIMIT: usize = 512;
/// Largest cloud accepted by [`emd`].
pub const MAX_EMD_POINTS: usize = 2048;
/// Relative duality gap the auction must certify.
pub const AUCTION_GAP: f64 = 0.01;

fn distance_matrix(a: &PointCloud, b: &PointCloud) -> DMatrix<f64> {
    let (pa, pb) = (a.points(), b.points());
    DMatrix::from_fn(pa.len(), pb.len(), |i, j| (pa[i] - pb[j]).norm())
}

/// Minimum-cost perfect matching under Euclidean distance, divided by the
/// point count. Exact up to [`EXACT_EMD_LIMIT`] points, auction above
/// (falling back to the exact solver if the gap cannot be certified).
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    if n > MAX_EMD_POINTS {
        return Err(Error::InvalidArgument(format!("emd supports at most {MAX_EMD_POINTS} points, got {n}")));
    }
    let cost = distance_matrix(a, b);
    let total = if n <= EXACT_EMD_LIMIT {
        hungarian(&cost)?.cost
    } else {
        let r = auction(&cost, AUCTION_GAP)?;
        if r.gap <= AUCTION_GAP {
            r.assignment.cost
        } else {
            hungarian(&cost)?.cost
        }
    };
    Ok(total / n as f64)
}

/// EMD after seeded uniform subsampling of both clouds to a common size
/// (at most [`MAX_EMD_POINTS`]).
pub fn emd_resampled(a: &PointCloud, b: &PointCloud, seed: u64) -> Result<f64> {
    let n = a.len().min(b.len()).min(MAX_EMD_POINTS);
    let a = a.subsample(n, derive_seed(seed, "emd-a", 0))?;
    let b = b.subsample(n, derive_seed(seed, "emd-b", 0))?;
    emd(&a, &b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// IoU voxel size in mm.
    pub iou_spacing: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { iou_spacing: 0.5 }
    }
}

/// All three metrics for one predicted tooth against its ground truth.
pub fn evaluate_tooth(
    case_id: u32,
    fdi: FdiTooth,
    pred: &PointCloud,
    gt: &PointCloud,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<ToothResult> {
    Ok(ToothResult {
        case_id,
        fdi,
        iou: cloud_iou(pred, gt, cfg.iou_spacing)?,
        cd: chamfer_distance(pred, gt)?,
        emd: emd_resampled(pred, gt, seed)?,
    })
}
