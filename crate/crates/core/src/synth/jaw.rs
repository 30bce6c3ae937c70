//! Assembly of a full jaw case: arch, tooth placement, labels and
//! attenuation.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::arch::{polyline_distance, ArchCurve, ArchParams};
use super::template::ToothTemplate;
use crate::error::{Error, Result};
use crate::geom::{FdiTooth, GridSpec, LabelVolume, PointCloud, RigidTransform, VoxelGrid};
use crate::seeding::{derive_seed, rng_for};

/// Parameters of the procedural corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    /// Voxel size in mm; also the panoramic pixel size.
    pub spacing: f64,
    /// Volume corner; `None` centres the volume on the nominal arch.
    pub origin: Option<[f64; 3]>,
    pub arch: ArchParams,
    /// Relative std of the per-case arch width and depth.
    pub arch_jitter: f64,
    /// Uniform scale applied to the nominal tooth templates.
    pub tooth_scale: f64,
    /// Relative std of per-tooth size parameters.
    pub tooth_jitter: f64,
    /// Highest FDI position generated (7 leaves out third molars).
    pub max_position: u8,
    /// Probability that a tooth is missing.
    pub dropout: f64,
    /// Vertical gap between upper and lower crown tips (mm).
    pub occlusal_gap: f64,
    /// Gap between neighbouring crowns along the arch (mm).
    pub tooth_gap: f64,
    pub bone_level: f32,
    pub tooth_level: f32,
    pub noise_sigma: f64,
    /// In-plane half-width of the bone band around the arch (mm).
    pub bone_margin: f64,
    pub points_per_tooth: usize,
    /// Largest tolerated shared-voxel fraction between two teeth, relative
    /// to the smaller one.
    pub overlap_tolerance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 96],
            spacing: 0.5,
            origin: None,
            arch: ArchParams::default(),
            arch_jitter: 0.03,
            tooth_scale: 0.8,
            tooth_jitter: 0.05,
            max_position: 7,
            dropout: 0.05,
            occlusal_gap: 1.0,
            tooth_gap: 0.3,
            bone_level: 0.3,
            tooth_level: 0.8,
            noise_sigma: 0.02,
            bone_margin: 6.0,
            points_per_tooth: 1024,
            overlap_tolerance: 0.15,
        }
    }
}

impl SynthConfig {
    /// Same physical field of view at 1 mm voxels.
    pub fn coarse() -> Self {
        Self { dims: [64, 64, 48], spacing: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.dims, self.spacing, self.origin.unwrap_or([0.0; 3]))
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(1..=8).contains(&self.max_position) {
            return Err(Error::Config(format!("max_position {} outside 1..=8", self.max_position)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.points_per_tooth == 0 {
            return Err(Error::Config("points_per_tooth must be >= 1".into()));
        }
        for (name, v) in [
            ("tooth_scale", self.tooth_scale),
            ("bone_margin", self.bone_margin),
            ("overlap_tolerance", self.overlap_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("arch_jitter", self.arch_jitter),
            ("tooth_jitter", self.tooth_jitter),
            ("noise_sigma", self.noise_sigma),
            ("occlusal_gap", self.occlusal_gap),
            ("tooth_gap", self.tooth_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let origin = self.origin.unwrap_or_else(|| {
            let s = self.spacing;
            [
                -(self.dims[0] as f64) * s / 2.0,
                self.arch.depth / 2.0 - self.dims[1] as f64 * s / 2.0,
                -(self.dims[2] as f64) * s / 2.0,
            ]
        });
        GridSpec::new(self.dims, self.spacing, origin)
    }

    /// Teeth generated for every case, in FDI order.
    pub fn teeth(&self) -> Vec<FdiTooth> {
        FdiTooth::all().filter(|t| t.position() <= self.max_position).collect()
    }

    /// Template before per-case jitter.
    pub fn base_template(&self, fdi: FdiTooth) -> ToothTemplate {
        let mut t = ToothTemplate::nominal(fdi).scaled(self.tooth_scale);
        t.jitter = self.tooth_jitter;
        t
    }

    /// Canonical-origin height of a tooth with the given crown top, so
    /// that crown tips sit half the occlusal gap away from z = 0.
    pub fn cej_height(&self, fdi: FdiTooth, top_z: f64) -> f64 {
        let z = self.occlusal_gap / 2.0 + top_z;
        if fdi.is_upper() {
            z
        } else {
            -z
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToothRecord {
    pub fdi: FdiTooth,
    /// Jittered template actually placed.
    pub template: ToothTemplate,
    /// Canonical to global.
    pub transform: RigidTransform,
    /// Arch parameter of the tooth's station.
    pub station: f64,
    pub present: bool,
    /// Canonical-frame surface samples; `None` for missing teeth.
    pub gt_cloud: Option<PointCloud>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JawCase {
    pub id: u32,
    pub seed: u64,
    pub arch: ArchCurve,
    pub volume: VoxelGrid,
    pub labels: LabelVolume,
    pub teeth: BTreeMap<FdiTooth, ToothRecord>,
}

impl JawCase {
    pub fn present_teeth(&self) -> impl Iterator<Item = &ToothRecord> {
        self.teeth.values().filter(|t| t.present)
    }

    pub fn gt_transform(&self, fdi: FdiTooth) -> Result<&RigidTransform> {
        self.teeth.get(&fdi).map(|t| &t.transform).ok_or(Error::MissingTransform(fdi))
    }

    pub fn gt_cloud(&self, fdi: FdiTooth) -> Result<&PointCloud> {
        self.teeth
            .get(&fdi)
            .and_then(|t| t.gt_cloud.as_ref())
            .ok_or(Error::MissingTooth(fdi))
    }
}

/// A single tooth shape with surface samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTooth {
    pub template: ToothTemplate,
    pub surface: PointCloud,
}

impl GeneratedTooth {
    /// Occupancy of the tooth on a canonical grid covering its bounding box
    /// with one voxel of padding.
    pub fn occupancy(&self, spacing: f64) -> Result<VoxelGrid> {
        let (lo, hi) = self.template.bbox();
        let lo = lo - Vector3::repeat(spacing);
        let hi = hi + Vector3::repeat(spacing);
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / spacing).ceil() as usize);
        let spec = GridSpec::new(dims, spacing, [lo.x, lo.y, lo.z])?;
        let mut grid = VoxelGrid::zeros(spec);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    if self.template.contains(&spec.center(i, j, k)) {
                        grid.set(i, j, k, 1.0);
                    }
                }
            }
        }
        Ok(grid)
    }
}

/// Jitters `template` and samples `n` surface points, all from `seed`.
pub fn generate_tooth(template: &ToothTemplate, n: usize, seed: u64) -> Result<GeneratedTooth> {
    template.validate()?;
    let jittered = template.jittered(&mut rng_for(seed, "jitter", 0));
    jittered.validate()?;
    let surface = jittered.surface_points(n, &mut rng_for(seed, "surface", 0))?;
    Ok(GeneratedTooth { template: jittered, surface })
}

/// Teeth of one jaw in arch order (patient right to left).
fn arch_order(teeth: &[FdiTooth], upper: bool) -> Vec<FdiTooth> {
    let (right, left) = if upper { (1, 2) } else { (4, 3) };
    let mut out: Vec<FdiTooth> = teeth.iter().copied().filter(|t| t.quadrant() == right).collect();
    out.sort_by_key(|t| std::cmp::Reverse(t.position()));
    let mut l: Vec<FdiTooth> = teeth.iter().copied().filter(|t| t.quadrant() == left).collect();
    l.sort_by_key(|t| t.position());
    out.extend(l);
    out
}

/// Per-case seed for case `id` of a corpus seeded with `seed`.
pub fn case_seed(seed: u64, id: u32) -> u64 {
    derive_seed(seed, "case", id as u64)
}

pub fn assemble_jaw(cfg: &SynthConfig, id: u32, seed: u64) -> Result<JawCase> {
    cfg.validate()?;
    let cs = case_seed(seed, id);
    let spec = cfg.grid()?;

    let mut rng = rng_for(cs, "arch", 0);
    let mut jitter = |v: f64| {
        let z: f64 = rng.sample(StandardNormal);
        v * (1.0 + cfg.arch_jitter * z).clamp(0.9, 1.1)
    };
    let arch = ArchCurve::new(ArchParams {
        half_width: jitter(cfg.arch.half_width),
        depth: jitter(cfg.arch.depth),
        kappa: cfg.arch.kappa,
    })?;

    let all = cfg.teeth();
    let mut teeth = BTreeMap::new();
    for upper in [true, false] {
        let order = arch_order(&all, upper);
        let templates: Vec<ToothTemplate> = order
            .iter()
            .map(|&fdi| {
                let t = cfg.base_template(fdi).jittered(&mut rng_for(cs, "jitter", fdi.code() as u64));
                t.validate().map(|_| t)
            })
            .collect::<Result<_>>()?;
        let span: f64 = templates.iter().map(|t| t.width()).sum::<f64>()
            + cfg.tooth_gap * (templates.len().saturating_sub(1)) as f64;
        if span >= arch.length() {
            return Err(Error::Placement(format!(
                "case {id}: teeth span {span:.1} mm exceeds arch length {:.1} mm",
                arch.length()
            )));
        }
        let mut cursor = (arch.length() - span) / 2.0;
        for (fdi, template) in order.into_iter().zip(templates) {
            let station = arch.t_at_arclength(cursor + template.width() / 2.0);
            cursor += template.width() + cfg.tooth_gap;
            let transform = arch.placement(station, cfg.cej_height(fdi, template.top_z()), fdi.is_upper())?;
            let present = rng_for(cs, "presence", fdi.code() as u64).gen::<f64>() >= cfg.dropout;
            let gt_cloud = if present {
                Some(template.surface_points(cfg.points_per_tooth, &mut rng_for(cs, "surface", fdi.code() as u64))?)
            } else {
                None
            };
            teeth.insert(fdi, ToothRecord { fdi, template, transform, station, present, gt_cloud });
        }
    }

    let labels = paint_labels(&spec, &teeth, cfg.overlap_tolerance, id)?;
    for rec in teeth.values().filter(|r| r.present) {
        if labels.histogram()[rec.fdi.channel()] == 0 {
            return Err(Error::Placement(format!("case {id}: tooth {} has no voxels", rec.fdi)));
        }
    }
    let volume = attenuation(cfg, &spec, &arch, &teeth, &labels, cs);
    Ok(JawCase { id, seed: cs, arch, volume, labels, teeth })
}

/// Voxel index range covered by a transformed canonical box.
fn voxel_range(spec: &GridSpec, t: &RigidTransform, lo: Vector3<f64>, hi: Vector3<f64>) -> Option<[[usize; 2]; 3]> {
    let mut glo = Vector3::repeat(f64::INFINITY);
    let mut ghi = Vector3::repeat(f64::NEG_INFINITY);
    for c in 0..8 {
        let p = Vector3::new(
            if c & 1 == 0 { lo.x } else { hi.x },
            if c & 2 == 0 { lo.y } else { hi.y },
            if c & 4 == 0 { lo.z } else { hi.z },
        );
        let g = t.apply_point(&p);
        glo = glo.inf(&g);
        ghi = ghi.sup(&g);
    }
    let mut out = [[0usize; 2]; 3];
    for a in 0..3 {
        let f0 = ((glo[a] - spec.origin[a]) / spec.spacing - 0.5).floor().max(0.0);
        let f1 = ((ghi[a] - spec.origin[a]) / spec.spacing - 0.5).ceil().min(spec.dims[a] as f64 - 1.0);
        if f1 < f0 {
            return None;
        }
        out[a] = [f0 as usize, f1 as usize];
    }
    Some(out)
}

/// Labels every voxel whose centre lies inside a present tooth. Voxels
/// claimed by two teeth go to the tooth whose canonical origin is nearer
/// (lower channel on exact ties).
fn paint_labels(
    spec: &GridSpec,
    teeth: &BTreeMap<FdiTooth, ToothRecord>,
    tolerance: f64,
    id: u32,
) -> Result<LabelVolume> {
    let mut labels = LabelVolume::zeros(*spec);
    let mut claimed = vec![0usize; 33];
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let by_channel: BTreeMap<usize, &ToothRecord> =
        teeth.values().filter(|r| r.present).map(|r| (r.fdi.channel(), r)).collect();

    for (&ch, rec) in &by_channel {
        let (lo, hi) = rec.template.bbox();
        let Some(range) = voxel_range(spec, &rec.transform, lo, hi) else { continue };
        let inv = rec.transform.inverse();
        for k in range[2][0]..=range[2][1] {
            for j in range[1][0]..=range[1][1] {
                for i in range[0][0]..=range[0][1] {
                    let c = spec.center(i, j, k);
                    if !rec.template.contains(&inv.apply_point(&c)) {
                        continue;
                    }
                    claimed[ch] += 1;
                    let prev = labels.get(i, j, k) as usize;
                    if prev == 0 {
                        labels.set(i, j, k, ch as u8);
                        continue;
                    }
                    *shared.entry((prev.min(ch), prev.max(ch))).or_default() += 1;
                    let other = by_channel[&prev];
                    let d_new = (c - rec.transform.translation()).norm();
                    let d_old = (c - other.transform.translation()).norm();
                    if d_new < d_old {
                        labels.set(i, j, k, ch as u8);
                    }
                }
            }
        }
    }
    for (&(a, b), &n) in &shared {
        let smaller = claimed[a].min(claimed[b]).max(1);
        if n as f64 > tolerance * smaller as f64 {
            return Err(Error::Placement(format!(
                "case {id}: teeth {} and {} share {n} voxels ({:.0}% of the smaller)",
                FdiTooth::from_channel(a)?,
                FdiTooth::from_channel(b)?,
                100.0 * n as f64 / smaller as f64
            )));
        }
    }
    Ok(labels)
}

/// Bone band around the arch below/above the crowns, teeth on top,
/// additive Gaussian noise, clamped to `[0, 1]`.
fn attenuation(
    cfg: &SynthConfig,
    spec: &GridSpec,
    arch: &ArchCurve,
    teeth: &BTreeMap<FdiTooth, ToothRecord>,
    labels: &LabelVolume,
    case_seed: u64,
) -> VoxelGrid {
    // Vertical bone bands from the placed teeth: from 2 mm beyond the
    // deepest apex to 1 mm short of the mean cemento-enamel junction.
    let band = |upper: bool| {
        let recs: Vec<&ToothRecord> = teeth.values().filter(|r| r.fdi.is_upper() == upper).collect();
        let cej = recs.iter().map(|r| r.transform.translation().z).sum::<f64>() / recs.len().max(1) as f64;
        if upper {
            let apex = recs.iter().map(|r| r.transform.translation().z - r.template.apex_z()).fold(cej, f64::max);
            (cej + 1.0, apex + 2.0)
        } else {
            let apex = recs.iter().map(|r| r.transform.translation().z + r.template.apex_z()).fold(cej, f64::min);
            (apex - 2.0, cej - 1.0)
        }
    };
    let bands = [band(true), band(false)];
    let poly = arch.polyline(512);

    let mut grid = VoxelGrid::zeros(*spec);
    let mut rng = rng_for(case_seed, "noise", 0);
    let [nx, ny, nz] = spec.dims;
    let mut near = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = spec.center(i, j, 0);
            near[j * nx + i] = polyline_distance(&poly, c.x, c.y) <= cfg.bone_margin;
        }
    }
    for k in 0..nz {
        let z = spec.center(0, 0, k).z;
        let in_band = bands.iter().any(|&(lo, hi)| z >= lo && z <= hi);
        for j in 0..ny {
            for i in 0..nx {
                let idx = spec.index(i, j, k);
                let mut v = if labels.labels()[idx] != 0 {
                    cfg.tooth_level
                } else if in_band && near[j * nx + i] {
                    cfg.bone_level
                } else {
                    0.0
                } as f64;
                if cfg.noise_sigma > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    v += cfg.noise_sigma * n;
                }
                grid.values_mut()[idx] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    grid
}

/// `n` points uniformly distributed over the boundary voxels of a tooth's
/// labelled region: a boundary voxel is picked uniformly, then a point
/// uniformly inside it. Boundary means at least one 6-neighbour carries a
/// different label or lies outside the grid.
pub fn surface_points(labels: &LabelVolume, tooth: FdiTooth, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("surface point count must be >= 1".into()));
    }
    let boundary = boundary_voxels(labels, tooth.channel() as u8);
    if boundary.is_empty() {
        return Err(Error::MissingTooth(tooth));
    }
    let spec = labels.spec();
    let mut rng = rng_for(seed, "label-surface", tooth.code() as u64);
    let o = Vector3::from(spec.origin);
    let pts = (0..n)
        .map(|_| {
            let [i, j, k] = boundary[rng.gen_range(0..boundary.len())];
            let f = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            o + (Vector3::new(i as f64, j as f64, k as f64) + f) * spec.spacing
        })
        .collect();
    PointCloud::new(pts, crate::geom::Frame::Global)
}

/// Boundary voxels of label `label` in index order.
pub fn boundary_voxels(labels: &LabelVolume, label: u8) -> Vec<[usize; 3]> {
    let spec = labels.spec();
    let [nx, ny, nz] = spec.dims;
    let mut out = Vec::new();
    for (idx, &l) in labels.labels().iter().enumerate() {
        if l != label {
            continue;
        }
        let [i, j, k] = spec.unindex(idx);
        let edge = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
        let differs = edge
            || labels.get(i - 1, j, k) != label
            || labels.get(i + 1, j, k) != label
            || labels.get(i, j - 1, k) != label
            || labels.get(i, j + 1, k) != label
            || labels.get(i, j, k - 1) != label
            || labels.get(i, j, k + 1) != label;
        if differs {
            out.push([i, j, k]);
        }
    }
    out
}
