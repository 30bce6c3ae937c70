//! Case directory layout:
//!
//! ```text
//! case_<id>/volume.vol(.json)   attenuation, f32 LE
//! case_<id>/labels.lab(.json)   labels, u8
//! case_<id>/teeth.json          arch, per-tooth template, transform, presence
//! case_<id>/gt/<fdi>.ply        canonical surface samples of present teeth
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::arch::{ArchCurve, ArchParams};
use super::jaw::{JawCase, ToothRecord};
use super::template::ToothTemplate;
use crate::error::{Error, Result};
use crate::formats::{read_json, read_labels, read_ply, read_volume, write_json, write_labels, write_ply, write_volume};
use crate::geom::{FdiTooth, Frame, RigidTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToothEntry {
    pub fdi: FdiTooth,
    pub present: bool,
    pub station: f64,
    /// Canonical-to-global transform, rotation rows then translation.
    pub transform: [f64; 12],
    pub template: ToothTemplate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeethFile {
    pub id: u32,
    pub seed: u64,
    pub arch: ArchParams,
    pub teeth: Vec<ToothEntry>,
}

pub fn case_dir(root: &Path, id: u32) -> PathBuf {
    root.join(format!("case_{id:04}"))
}

pub fn save_case(root: &Path, case: &JawCase) -> Result<PathBuf> {
    let dir = case_dir(root, case.id);
    write_volume(&dir.join("volume.vol"), &case.volume)?;
    write_labels(&dir.join("labels.lab"), &case.labels)?;
    let teeth = case
        .teeth
        .values()
        .map(|r| ToothEntry {
            fdi: r.fdi,
            present: r.present,
            station: r.station,
            transform: r.transform.to_row_major(),
            template: r.template.clone(),
        })
        .collect();
    write_json(
        &dir.join("teeth.json"),
        &TeethFile { id: case.id, seed: case.seed, arch: *case.arch.params(), teeth },
    )?;
    for r in case.teeth.values() {
        if let Some(cloud) = &r.gt_cloud {
            write_ply(&dir.join("gt").join(format!("{}.ply", r.fdi)), cloud)?;
        }
    }
    Ok(dir)
}

pub fn load_case(root: &Path, id: u32) -> Result<JawCase> {
    let dir = case_dir(root, id);
    load_case_dir(&dir)
}

pub fn load_case_dir(dir: &Path) -> Result<JawCase> {
    let meta: TeethFile = read_json(&dir.join("teeth.json"))?;
    let volume = read_volume(&dir.join("volume.vol"))?;
    let labels = read_labels(&dir.join("labels.lab"))?;
    if volume.spec() != labels.spec() {
        return Err(Error::format(dir, "volume and label grids differ"));
    }
    let mut teeth = BTreeMap::new();
    for e in meta.teeth {
        let gt_cloud = if e.present {
            Some(read_ply(&dir.join("gt").join(format!("{}.ply", e.fdi)), Frame::Canonical)?)
        } else {
            None
        };
        let rec = ToothRecord {
            fdi: e.fdi,
            template: e.template,
            transform: RigidTransform::from_row_major(&e.transform)?,
            station: e.station,
            present: e.present,
            gt_cloud,
        };
        teeth.insert(e.fdi, rec);
    }
    Ok(JawCase { id: meta.id, seed: meta.seed, arch: ArchCurve::new(meta.arch)?, volume, labels, teeth })
}
