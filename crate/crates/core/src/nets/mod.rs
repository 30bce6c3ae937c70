//! The segmentation network, patch extraction, the point generator with
//! its prior fusion block, and position restoration.

mod layers;
mod patches;
mod pfm;
mod restore;
mod segnet;
mod tgnet;

pub use layers::{Conv3, Linear, UpConv2};
pub use patches::{extract_patches, largest_component, resize_bilinear, BBox, PatchConfig, ToothPatch};
pub use pfm::{pfm_forward, PfmOutput};
pub use restore::{derived_transform, restore_position, RestoreMode};
pub use segnet::{mask_to_pixel_major, pixel_major_to_mask, prepare_input, SegHead, SegNet, SegNetConfig};
pub use tgnet::{TGNet, TGNetConfig};
