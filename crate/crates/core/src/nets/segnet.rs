//! Mini U-Net with unpadded convolutions and a per-pixel 33-way head.
//!
//! Unpadded convolutions shrink the map, so the input is reflect-padded
//! first (overlap-tile) and the output cropped back to the image size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv3, Linear, UpConv2};
use crate::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::MASK_CHANNELS;
use crate::panoramic::{Image2D, MultiLabelMask};
use crate::seeding::derive_seed;

/// Output activation: independent sigmoids (multi-label) or a softmax
/// across the 33 channels (single-label baseline).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegHead {
    Sigmoid,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegNetConfig {
    pub depth: usize,
    pub base: usize,
    pub head: SegHead,
    /// Append normalized column/row coordinate channels to the input.
    pub coords: bool,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self { depth: 3, base: 8, head: SegHead::Sigmoid, coords: true }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.depth) {
            return Err(Error::Config(format!("segnet depth must be in 1..=5, got {}", self.depth)));
        }
        if self.base == 0 {
            return Err(Error::Config("segnet base channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Output size for a padded input side `s`, if every pooling sees an
    /// even size and every skip crop is centred.
    fn output_side(&self, s: usize) -> Option<usize> {
        let mut size = s as isize;
        let mut skips = Vec::new();
        for _ in 0..self.depth {
            size -= 4;
            if size < 2 || size % 2 != 0 {
                return None;
            }
            skips.push(size);
            size /= 2;
        }
        size -= 4;
        if size < 1 {
            return None;
        }
        for skip in skips.into_iter().rev() {
            size = 2 * size;
            if (skip - size) % 2 != 0 || skip < size {
                return None;
            }
            size -= 4;
            if size < 1 {
                return None;
            }
        }
        Some(size as usize)
    }

    /// `(padded side, leading pad)` for an image side `n`: the smallest
    /// admissible input whose output covers `n` pixels.
    pub fn padding(&self, n: usize) -> Result<(usize, usize)> {
        for s in n..n + 64 * (1 << self.depth) + 256 {
            if let Some(out) = self.output_side(s) {
                if out >= n && (s - out) % 2 == 0 {
                    return Ok((s, (s - out) / 2));
                }
            }
        }
        Err(Error::Config(format!("no admissible padding for side {n} at depth {}", self.depth)))
    }
}

/// Mirror index without edge repetition, valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j >= n as isize {
        (period - j) as usize
    } else {
        j as usize
    }
}

/// Per-image standardization followed by reflect padding: `[1, sh, sw]`,
/// or `[3, sh, sw]` with coordinate channels. Coordinates run linearly
/// through the padding so the mirrored border stays distinguishable.
pub fn prepare_input(img: &Image2D, cfg: &SegNetConfig) -> Result<(Tensor, [usize; 2])> {
    let (h, w) = (img.height(), img.width());
    let (sh, top) = cfg.padding(h)?;
    let (sw, left) = cfg.padding(w)?;
    let px = img.pixels();
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let var = px.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    let mut data = Vec::with_capacity(3 * sh * sw);
    for r in 0..sh {
        let y = reflect(r as isize - top as isize, h);
        for c in 0..sw {
            let x = reflect(c as isize - left as isize, w);
            data.push((px[y * w + x] - mean) / std);
        }
    }
    if !cfg.coords {
        return Ok((Tensor::new(vec![1, sh, sw], data)?, [sh, sw]));
    }
    let norm = |i: usize, lead: usize, n: usize| 2.0 * (i as f64 - lead as f64 + 0.5) / n as f64 - 1.0;
    for _ in 0..sh {
        data.extend((0..sw).map(|c| norm(c, left, w)));
    }
    for r in 0..sh {
        data.extend(std::iter::repeat(norm(r, top, h)).take(sw));
    }
    Ok((Tensor::new(vec![3, sh, sw], data)?, [sh, sw]))
}

#[derive(Clone, Debug)]
struct Level {
    a: Conv3,
    b: Conv3,
}

#[derive(Clone, Debug)]
struct UpLevel {
    up: UpConv2,
    a: Conv3,
    b: Conv3,
}

#[derive(Clone, Debug)]
pub struct SegNet {
    cfg: SegNetConfig,
    down: Vec<Level>,
    bottom: Level,
    up: Vec<UpLevel>,
    head: Linear,
}

impl SegNet {
    /// Registers freshly initialized parameters in `store`.
    pub fn new(cfg: SegNetConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "segnet-init", 0));
        let ch = |l: usize| cfg.base << l;
        let mut down = Vec::new();
        let mut cin = if cfg.coords { 3 } else { 1 };
        for l in 0..cfg.depth {
            let a = Conv3::new(store, &format!("seg.down{l}.a"), cin, ch(l), &mut rng);
            let b = Conv3::new(store, &format!("seg.down{l}.b"), ch(l), ch(l), &mut rng);
            down.push(Level { a, b });
            cin = ch(l);
        }
        let d = cfg.depth;
        let bottom = Level {
            a: Conv3::new(store, "seg.bottom.a", ch(d - 1), ch(d), &mut rng),
            b: Conv3::new(store, "seg.bottom.b", ch(d), ch(d), &mut rng),
        };
        let mut up = Vec::new();
        for l in (0..d).rev() {
            up.push(UpLevel {
                up: UpConv2::new(store, &format!("seg.up{l}.t"), ch(l + 1), ch(l), &mut rng),
                a: Conv3::new(store, &format!("seg.up{l}.a"), 2 * ch(l), ch(l), &mut rng),
                b: Conv3::new(store, &format!("seg.up{l}.b"), ch(l), ch(l), &mut rng),
            });
        }
        let head = Linear::new(store, "seg.head", ch(0), MASK_CHANNELS, 1.0, &mut rng);
        Ok(Self { cfg, down, bottom, up, head })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.cfg
    }

    /// Pre-activation scores `[H*W, 33]`, pixel-major.
    pub fn logits(&self, tape: &mut Tape, p: &Bound, img: &Image2D) -> Result<Var> {
        let (input, _) = prepare_input(img, &self.cfg)?;
        let mut x = tape.constant(input);
        let mut skips = Vec::new();
        for level in &self.down {
            x = level.a.forward_relu(tape, p, x)?;
            x = level.b.forward_relu(tape, p, x)?;
            skips.push(x);
            x = tape.maxpool_2x2(x)?;
        }
        x = self.bottom.a.forward_relu(tape, p, x)?;
        x = self.bottom.b.forward_relu(tape, p, x)?;
        for level in &self.up {
            x = level.up.forward(tape, p, x)?;
            let skip = skips.pop().expect("one skip per level");
            let (ss, xs) = (tape.shape(skip).to_vec(), tape.shape(x).to_vec());
            let (dy, dx) = ((ss[1] - xs[1]) / 2, (ss[2] - xs[2]) / 2);
            let cropped = tape.crop2d(skip, dy, dx, xs[1], xs[2])?;
            x = tape.concat(&[cropped, x], 0)?;
            x = level.a.forward_relu(tape, p, x)?;
            x = level.b.forward_relu(tape, p, x)?;
        }
        let (h, w) = (img.height(), img.width());
        let x = tape.crop2d(x, 0, 0, h, w)?;
        let c = tape.shape(x)[0];
        let flat = tape.reshape(x, &[c, h * w])?;
        let rows = tape.transpose(flat)?;
        self.head.forward(tape, p, rows)
    }

    /// Probabilities `[H*W, 33]` under the configured head.
    pub fn probabilities(&self, tape: &mut Tape, p: &Bound, img: &Image2D) -> Result<Var> {
        let z = self.logits(tape, p, img)?;
        match self.cfg.head {
            SegHead::Sigmoid => tape.sigmoid(z),
            SegHead::Softmax => tape.softmax(z, 1),
        }
    }

    /// Inference with frozen parameters.
    pub fn predict(&self, store: &ParamStore, img: &Image2D) -> Result<MultiLabelMask> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let probs = self.probabilities(&mut tape, &p, img)?;
        pixel_major_to_mask(tape.value(probs), img.height(), img.width())
    }
}

/// `[33, H, W]` mask to the `[H*W, 33]` layout used by the losses.
pub fn mask_to_pixel_major(mask: &MultiLabelMask) -> Tensor {
    let n = mask.height() * mask.width();
    let mut data = vec![0.0; n * MASK_CHANNELS];
    for c in 0..MASK_CHANNELS {
        for (i, &v) in mask.channel(c).iter().enumerate() {
            data[i * MASK_CHANNELS + c] = v;
        }
    }
    Tensor::new(vec![n, MASK_CHANNELS], data).expect("shape matches data")
}

pub fn pixel_major_to_mask(t: &Tensor, height: usize, width: usize) -> Result<MultiLabelMask> {
    let n = height * width;
    if t.shape() != [n, MASK_CHANNELS] {
        return Err(Error::ShapeMismatch { op: "pixel_major_to_mask", lhs: t.shape().to_vec(), rhs: vec![n, MASK_CHANNELS] });
    }
    let mut data = vec![0.0; n * MASK_CHANNELS];
    for (i, row) in t.data().chunks_exact(MASK_CHANNELS).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            data[c * n + i] = v.clamp(0.0, 1.0);
        }
    }
    MultiLabelMask::new(height, width, data)
}
