//! Placing canonical tooth clouds back into the jaw frame.

use serde::{Deserialize, Serialize};

use super::patches::ToothPatch;
use crate::error::{Error, Result};
use crate::geom::{apply_transform, FdiTooth, PointCloud, RigidTransform};
use crate::panoramic::ProjectionGeometry;
use crate::synth::JawCase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestoreMode {
    /// The case's stored canonical-to-global transform.
    Oracle,
    /// Estimated from the patch position in the panoramic image.
    Derived,
}

/// Transform read off the panoramic image: the patch centre column gives
/// the arch station, the crown-side row of the component gives the height
/// of the cloud's crown tip, and the rotation is the arch tangent frame.
///
/// The crown edge is used because thin root tips fall below voxel size and
/// are missing from the projected mask, which biases the mask centre.
pub fn derived_transform(
    cloud: &PointCloud,
    tooth: FdiTooth,
    patch: &ToothPatch,
    geom: &ProjectionGeometry,
) -> Result<RigidTransform> {
    if patch.is_blank() || !patch.center_uv.iter().all(|v| v.is_finite()) {
        return Err(Error::MissingTooth(tooth));
    }
    let upper = tooth.is_upper();
    let c = &patch.component;
    // Upper crowns point down, so their tip is the component's last row.
    let row = if upper { (c.top + c.height) as f64 - 0.5 } else { c.top as f64 + 0.5 };
    let (t, z_tip) = geom.pixel_to_arch(patch.center_uv[0], row);
    let (_, hi) = cloud.extent();
    let z0 = if upper { z_tip + hi.z } else { z_tip - hi.z };
    geom.arch.placement(t, z0, upper)
}

/// Canonical cloud to the global jaw frame.
pub fn restore_position(
    cloud: &PointCloud,
    tooth: FdiTooth,
    case: &JawCase,
    mode: RestoreMode,
    patch: Option<&ToothPatch>,
    geom: Option<&ProjectionGeometry>,
) -> Result<PointCloud> {
    let transform = match mode {
        RestoreMode::Oracle => case.gt_transform(tooth)?.clone(),
        RestoreMode::Derived => match (patch, geom) {
            (Some(p), Some(g)) => derived_transform(cloud, tooth, p, g)?,
            _ => return Err(Error::InvalidArgument("derived restore needs a patch and a projection geometry".into())),
        },
    };
    Ok(apply_transform(cloud, &transform))
}
