//! Geometry primitives shared by every stage: FDI identifiers, point clouds,
//! voxel grids and rigid registration.

mod cloud;
mod fdi;
mod rigid;
mod sampling;
mod voxel;

pub use cloud::{Frame, PointCloud};
pub use fdi::{fdi_channel, FdiTooth, MASK_CHANNELS, TOOTH_CHANNELS};
pub use rigid::{apply_transform, kabsch, residual, to_canonical, RigidTransform};
pub use sampling::sample_sphere_points;
pub use voxel::{voxelize, Bounds, GridSpec, LabelVolume, VoxelGrid};
