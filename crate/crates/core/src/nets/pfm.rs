//! Prior fusion: single-head cross-attention from point tokens (queries)
//! to patch tokens (keys and values), with a residual connection.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub struct PfmOutput {
    /// `[N, d]` fused point tokens.
    pub fused: Var,
    /// `[N, M]` row-stochastic attention.
    pub attention: Var,
}

/// `Q + softmax(Q K^T / sqrt(d)) V` for `Q [N, d]`, `K, V [M, d]`.
pub fn pfm_forward(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<PfmOutput> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks != vs {
        return Err(Error::ShapeMismatch { op: "pfm", lhs: qs, rhs: ks });
    }
    let d = qs[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attention = tape.softmax(scores, 1)?;
    let mixed = tape.matmul(attention, v)?;
    let fused = tape.add(q, mixed)?;
    Ok(PfmOutput { fused, attention })
}
