//! Reconstruction of per-tooth 3D point clouds from a single panoramic
//! radiograph.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`geom`]: FDI identifiers, point clouds, voxel grids, rigid registration.
//! * [`synth`]: procedural jaw volumes with per-tooth ground truth.
//! * [`panoramic`]: panoramic projection of volumes and label masks.
//! * [`autodiff`]: a small tape-based reverse-mode differentiator with Adam.
//! * [`losses`]: segmentation (Dice-style and focal-style) and Chamfer losses.
//! * [`nets`]: the segmentation U-Net, patch extraction, the point generator
//!   and its cross-attention fusion block.
//! * [`metrics`]: IoU, Chamfer distance, EMD and report aggregation.
//! * [`pipeline`]: corpus synthesis, two-stage training, evaluation, ablations.

pub mod error;
pub mod autodiff;
pub mod formats;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod panoramic;
pub mod pipeline;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
