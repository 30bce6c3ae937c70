//! Training objectives: multi-label Dice (MB), focal-style unbalanced
//! cross-entropy (UB) and the symmetric squared Chamfer reconstruction
//! loss (RT).
//!
//! Every loss comes twice: a plain `f64` evaluator and a tape builder. The
//! two are kept separate on purpose so each can serve as the other's oracle.
//!
//! ```
//! use toothrecon::losses::{mb_loss, ub_loss, SegBatch};
//!
//! let b = SegBatch::new(vec![0.5, 0.5], vec![1.0, 0.0], 2, 1).unwrap();
//! assert!((mb_loss(&b) - 0.5).abs() < 1e-12);
//! let one = SegBatch::new(vec![0.5], vec![1.0], 1, 1).unwrap();
//! assert!((ub_loss(&one, 0.0) - 2f64.ln()).abs() < 1e-12);
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Predicted probabilities and binary targets, both `N x C` row-major
/// (pixel-major, class-minor).
#[derive(Clone, Debug, PartialEq)]
pub struct SegBatch {
    p: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    c: usize,
}

impl SegBatch {
    pub fn new(p: Vec<f64>, y: Vec<f64>, n: usize, c: usize) -> Result<Self> {
        if p.len() != n * c {
            return Err(Error::SizeMismatch { left: p.len(), right: n * c });
        }
        if y.len() != p.len() {
            return Err(Error::SizeMismatch { left: y.len(), right: p.len() });
        }
        if n == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!("empty batch {n}x{c}")));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        if let Some(v) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidArgument(format!("target {v} is not binary")));
        }
        Ok(Self { p, y, n, c })
    }

    pub fn pixels(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

/// Weights and focusing exponent of the segmentation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegLossConfig {
    pub lambda_mb: f64,
    pub lambda_ub: f64,
    pub gamma: f64,
}

impl Default for SegLossConfig {
    fn default() -> Self {
        Self { lambda_mb: 1.0, lambda_ub: 1.0, gamma: 2.0 }
    }
}

impl SegLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mb", self.lambda_mb), ("lambda_ub", self.lambda_ub), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `1 - mean_c dice_c`; a class with no target and no prediction mass
/// counts as perfect.
pub fn mb_loss(batch: &SegBatch) -> f64 {
    let (n, c) = (batch.n, batch.c);
    let mut dice = 0.0;
    for k in 0..c {
        let (mut inter, mut sy, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (p, y) = (batch.p[i * c + k], batch.y[i * c + k]);
            inter += y * p;
            sy += y;
            sp += p;
        }
        let denom = sy + sp;
        dice += if denom == 0.0 { 1.0 } else { 2.0 * inter / denom };
    }
    1.0 - dice / c as f64
}

/// `-(1/N) sum y (1-p)^gamma ln p` with `p` clamped away from 0 and 1.
pub fn ub_loss(batch: &SegBatch, gamma: f64) -> f64 {
    let mut s = 0.0;
    for (&p, &y) in batch.p.iter().zip(&batch.y) {
        if y == 0.0 {
            continue;
        }
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        s += y * (1.0 - p).powf(gamma) * p.ln();
    }
    -s / batch.n as f64
}

pub fn seg_loss(batch: &SegBatch, cfg: &SegLossConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.lambda_mb * mb_loss(batch) + cfg.lambda_ub * ub_loss(batch, cfg.gamma))
}

/// Index of the nearest point of `to` for every point of `from`; ties go
/// to the lowest index.
pub fn nearest_indices(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<usize> {
    from.iter()
        .map(|a| {
            let mut best = (f64::INFINITY, 0);
            for (j, b) in to.iter().enumerate() {
                let d = (a - b).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Unnormalized symmetric squared Chamfer distance.
pub fn rt_loss(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let one_way = |from: &[Vector3<f64>], to: &[Vector3<f64>]| -> f64 {
        let nn = nearest_indices(from, to);
        from.iter().zip(nn).map(|(p, j)| (p - to[j]).norm_squared()).sum()
    };
    Ok(one_way(a.points(), b.points()) + one_way(b.points(), a.points()))
}

fn check_probs(tape: &Tape, p: Var, y: &Tensor) -> Result<(usize, usize)> {
    let s = tape.shape(p);
    if s.len() != 2 || s != y.shape() {
        return Err(Error::ShapeMismatch { op: "seg loss", lhs: s.to_vec(), rhs: y.shape().to_vec() });
    }
    Ok((s[0], s[1]))
}

/// Tape version of [`mb_loss`]; `p` and `y` are `[N, C]`.
pub fn mb_loss_tape(tape: &mut Tape, p: Var, y: &Tensor) -> Result<Var> {
    let (n, c) = check_probs(tape, p, y)?;
    let yv = tape.constant(y.clone());
    let py = tape.mul(p, yv)?;
    let inter = tape.reduce_sum(py, 0)?;
    let sp = tape.reduce_sum(p, 0)?;
    let mut sy = vec![0.0; c];
    for i in 0..n {
        for k in 0..c {
            sy[k] += y.data()[i * c + k];
        }
    }
    // Empty classes get denominator 1 and a constant dice of 1.
    let empty: Vec<f64> = (0..c)
        .map(|k| if sy[k] + tape.value(sp).data()[k] == 0.0 { 1.0 } else { 0.0 })
        .collect();
    let shift: Vec<f64> = sy.iter().zip(&empty).map(|(s, e)| s + e).collect();
    let shift = tape.constant(Tensor::new(vec![c], shift)?);
    let denom = tape.add(sp, shift)?;
    let inv = tape.pow(denom, -1.0)?;
    let ratio = tape.mul(inter, inv)?;
    let dice = tape.scale(ratio, 2.0)?;
    let empty = tape.constant(Tensor::new(vec![c], empty)?);
    let dice = tape.add(dice, empty)?;
    let m = tape.mean(dice)?;
    let neg = tape.scale(m, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// Tape version of [`ub_loss`]; `gamma = 0` is plain cross-entropy.
pub fn ub_loss_tape(tape: &mut Tape, p: Var, y: &Tensor, gamma: f64) -> Result<Var> {
    let (n, _) = check_probs(tape, p, y)?;
    let pc = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let lg = tape.log(pc)?;
    let yv = tape.constant(y.clone());
    let mut term = tape.mul(lg, yv)?;
    if gamma != 0.0 {
        let neg = tape.scale(pc, -1.0)?;
        let q = tape.add_scalar(neg, 1.0)?;
        let w = tape.pow(q, gamma)?;
        term = tape.mul(term, w)?;
    }
    let s = tape.sum(term)?;
    tape.scale(s, -1.0 / n as f64)
}

/// Weighted MB + UB on the tape. A zero weight drops that term entirely.
pub fn seg_loss_tape(tape: &mut Tape, p: Var, y: &Tensor, cfg: &SegLossConfig) -> Result<Var> {
    cfg.validate()?;
    let mut total: Option<Var> = None;
    if cfg.lambda_mb > 0.0 {
        let l = mb_loss_tape(tape, p, y)?;
        total = Some(tape.scale(l, cfg.lambda_mb)?);
    }
    if cfg.lambda_ub > 0.0 {
        let l = ub_loss_tape(tape, p, y, cfg.gamma)?;
        let l = tape.scale(l, cfg.lambda_ub)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(Error::InvalidArgument("both segmentation loss weights are zero".into())),
    }
}

fn rows(t: &Tensor) -> Vec<Vector3<f64>> {
    t.data().chunks_exact(3).map(|r| Vector3::new(r[0], r[1], r[2])).collect()
}

fn check_cloud(tape: &Tape, v: Var) -> Result<()> {
    let s = tape.shape(v);
    if s.len() != 2 || s[1] != 3 {
        return Err(Error::ShapeMismatch { op: "point loss", lhs: s.to_vec(), rhs: vec![0, 3] });
    }
    if s[0] == 0 {
        return Err(Error::EmptyCloud);
    }
    Ok(())
}

/// Tape version of [`rt_loss`] for `[n, 3]` and `[m, 3]` clouds. Nearest
/// neighbours are chosen on the forward values and gathered, so the
/// gradient holds the assignment fixed.
pub fn rt_loss_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    check_cloud(tape, a)?;
    check_cloud(tape, b)?;
    let (pa, pb) = (rows(tape.value(a)), rows(tape.value(b)));
    let nn_ab = nearest_indices(&pa, &pb);
    let nn_ba = nearest_indices(&pb, &pa);
    let b_near = tape.embedding(b, &nn_ab)?;
    let a_near = tape.embedding(a, &nn_ba)?;
    let d1 = tape.sub(a, b_near)?;
    let d2 = tape.sub(b, a_near)?;
    let s1 = tape.mul(d1, d1)?;
    let s2 = tape.mul(d2, d2)?;
    let s1 = tape.sum(s1)?;
    let s2 = tape.sum(s2)?;
    tape.add(s1, s2)
}

/// `sum_i |a_i - b_i|^2` for equally sized clouds: the reconstruction loss
/// used when the Chamfer objective is switched off.
pub fn indexwise_sq_loss_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    check_cloud(tape, a)?;
    check_cloud(tape, b)?;
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "indexwise_sq_loss",
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    let d = tape.sub(a, b)?;
    let s = tape.mul(d, d)?;
    tape.sum(s)
}
