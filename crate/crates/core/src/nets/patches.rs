//! Per-tooth crops of the panoramic image guided by a multi-label mask.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_json;
use crate::geom::{FdiTooth, TOOTH_CHANNELS};
use crate::panoramic::{Image2D, MultiLabelMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    /// Binarization threshold on mask probabilities.
    pub tau: f64,
    /// Components smaller than this many pixels mean the tooth is absent.
    pub min_area: usize,
    /// Pixels added around the component's bounding box.
    pub margin: usize,
    /// Side of the resized square crop.
    pub size: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { tau: 0.5, min_area: 8, margin: 4, size: 64 }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("patch tau must be in (0, 1], got {}", self.tau)));
        }
        if self.size < 2 || self.min_area == 0 {
            return Err(Error::Config("patch size must be >= 2 and min_area >= 1".into()));
        }
        Ok(())
    }
}

/// Inclusive-exclusive pixel rectangle `[top, top+height) x [left, left+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToothPatch {
    pub fdi: FdiTooth,
    /// Image crop resized to `size x size`.
    pub crop: Image2D,
    /// Largest-component mask over the same crop, resized.
    pub mask_crop: Image2D,
    /// `(u, v)` = (column, row) of the bounding-box centre, in pixels of
    /// the panoramic image (pixel centres at half-integers).
    pub center_uv: [f64; 2],
    pub bbox: BBox,
    /// Tight bounds of the component, without margin.
    pub component: BBox,
    /// Component area in pixels before resizing.
    pub area: usize,
}

#[derive(Serialize)]
struct PatchMeta {
    fdi: FdiTooth,
    center_uv: [f64; 2],
    bbox: BBox,
    component: BBox,
    area: usize,
}

impl ToothPatch {
    /// All-zero stand-in for a tooth the segmentation missed.
    pub fn blank(fdi: FdiTooth, size: usize) -> Self {
        Self {
            fdi,
            crop: Image2D::zeros(size, size),
            mask_crop: Image2D::zeros(size, size),
            center_uv: [f64::NAN; 2],
            bbox: BBox { top: 0, left: 0, height: 0, width: 0 },
            component: BBox { top: 0, left: 0, height: 0, width: 0 },
            area: 0,
        }
    }

    pub fn is_blank(&self) -> bool {
        self.area == 0
    }

    pub fn size(&self) -> usize {
        self.crop.height()
    }

    /// Writes `<dir>/<fdi>.pgm`, `<dir>/<fdi>_mask.pgm` and `<dir>/<fdi>.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.crop.save_pgm(&dir.join(format!("{}.pgm", self.fdi)))?;
        self.mask_crop.save_pgm(&dir.join(format!("{}_mask.pgm", self.fdi)))?;
        let meta = PatchMeta {
            fdi: self.fdi,
            center_uv: self.center_uv,
            bbox: self.bbox,
            component: self.component,
            area: self.area,
        };
        write_json(&dir.join(format!("{}.json", self.fdi)), &meta)
    }
}

/// Largest 4-connected component of `on` (row-major `h x w`); ties go to
/// the component found first in scan order. Returns its pixel indices.
pub fn largest_component(on: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; on.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..on.len() {
        if !on[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Bilinear resize of the `bbox` region of a row-major field to
/// `size x size`, sampling at pixel centres with edge clamping.
pub fn resize_bilinear(src: &[f64], src_w: usize, bbox: &BBox, size: usize) -> Vec<f64> {
    let sy = bbox.height as f64 / size as f64;
    let sx = bbox.width as f64 / size as f64;
    let at = |y: usize, x: usize| src[(bbox.top + y) * src_w + bbox.left + x];
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (bbox.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(bbox.height - 1);
        let ty = fy - y0 as f64;
        for j in 0..size {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (bbox.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(bbox.width - 1);
            let tx = fx - x0 as f64;
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// One patch per tooth channel whose largest component reaches
/// `min_area`, in channel (FDI) order.
pub fn extract_patches(img: &Image2D, mask: &MultiLabelMask, cfg: &PatchConfig) -> Result<Vec<ToothPatch>> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::SizeMismatch { left: mask.height() * mask.width(), right: h * w });
    }
    let mut out = Vec::new();
    for c in 1..=TOOTH_CHANNELS {
        let on: Vec<bool> = mask.channel(c).iter().map(|&p| p >= cfg.tau).collect();
        let comp = largest_component(&on, h, w);
        if comp.len() < cfg.min_area {
            continue;
        }
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for &i in &comp {
            let (r, col) = (i / w, i % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(col);
            c1 = c1.max(col);
        }
        let center_uv = [(c0 + c1 + 1) as f64 / 2.0, (r0 + r1 + 1) as f64 / 2.0];
        let top = r0.saturating_sub(cfg.margin);
        let left = c0.saturating_sub(cfg.margin);
        let bottom = (r1 + 1 + cfg.margin).min(h);
        let right = (c1 + 1 + cfg.margin).min(w);
        let bbox = BBox { top, left, height: bottom - top, width: right - left };
        let mut comp_mask = vec![0.0; h * w];
        for &i in &comp {
            comp_mask[i] = 1.0;
        }
        let crop = Image2D::new(cfg.size, cfg.size, resize_bilinear(img.pixels(), w, &bbox, cfg.size))?;
        let mask_crop = Image2D::new(cfg.size, cfg.size, resize_bilinear(&comp_mask, w, &bbox, cfg.size))?;
        out.push(ToothPatch {
            fdi: FdiTooth::from_channel(c)?,
            crop,
            mask_crop,
            center_uv,
            bbox,
            component: BBox { top: r0, left: c0, height: r1 + 1 - r0, width: c1 + 1 - c0 },
            area: comp.len(),
        });
    }
    Ok(out)
}
