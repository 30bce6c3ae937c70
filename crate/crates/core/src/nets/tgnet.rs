//! Conditional point generator: deforms an initial point cloud into a
//! tooth, conditioned on its class and its panoramic patch.
//!
//! Per point, `[xyz | class embedding | patch vector]` runs through a
//! shared MLP; the first layer's output (local) is concatenated with the
//! max-pooled last layer (global) and projected to query tokens. Queries
//! attend to an 8x8 grid of patch tokens, then a decoder predicts an
//! offset and the output is `scale * (init + offset)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{he_normal, ones_column, Linear};
use super::patches::ToothPatch;
use super::pfm::pfm_forward;
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{Frame, PointCloud, TOOTH_CHANNELS};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TGNetConfig {
    /// Points per generated tooth.
    pub points: usize,
    pub embed_dim: usize,
    /// Width `d` of patch tokens and attention.
    pub token_dim: usize,
    /// Tokens form a `token_grid x token_grid` grid over the patch.
    pub token_grid: usize,
    /// Expected patch side; must be a multiple of `token_grid`.
    pub patch_size: usize,
    /// Width of the per-patch vector appended to every point.
    pub global_dim: usize,
    /// Shared per-point MLP widths.
    pub point_mlp: Vec<usize>,
    /// Hidden decoder widths; a final layer maps to 3.
    pub decoder: Vec<usize>,
    /// Cross-attention to patch tokens; off means the queries pass through.
    pub pfm: bool,
    /// Output scale in mm.
    pub scale: f64,
}

impl Default for TGNetConfig {
    fn default() -> Self {
        Self {
            points: 1024,
            embed_dim: 16,
            token_dim: 64,
            token_grid: 8,
            patch_size: 64,
            global_dim: 32,
            point_mlp: vec![64, 128, 1024],
            decoder: vec![512, 256],
            pfm: true,
            scale: 8.0,
        }
    }
}

impl TGNetConfig {
    /// Compact widths that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            points: 256,
            token_dim: 32,
            global_dim: 16,
            point_mlp: vec![32, 64],
            decoder: vec![64, 32],
            ..Self::default()
        }
    }

    /// Smallest sensible network, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            points: 6,
            embed_dim: 3,
            token_dim: 4,
            token_grid: 2,
            patch_size: 4,
            global_dim: 3,
            point_mlp: vec![5, 6],
            decoder: vec![5],
            pfm: true,
            scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.points, self.embed_dim, self.token_dim, self.token_grid, self.patch_size, self.global_dim];
        if dims.contains(&0) || self.point_mlp.is_empty() || self.point_mlp.contains(&0) || self.decoder.contains(&0) {
            return Err(Error::Config("tgnet widths must be positive and point_mlp non-empty".into()));
        }
        if self.patch_size % self.token_grid != 0 {
            return Err(Error::Config(format!(
                "patch size {} is not a multiple of token grid {}",
                self.patch_size, self.token_grid
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("tgnet scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.token_grid * self.token_grid
    }

    fn block(&self) -> usize {
        self.patch_size / self.token_grid
    }
}

#[derive(Clone, Debug)]
struct Attention {
    k: Linear,
    v: Linear,
}

#[derive(Clone, Debug)]
pub struct TGNet {
    cfg: TGNetConfig,
    token: Linear,
    pos: ParamId,
    patch_vec: Linear,
    embed: ParamId,
    mlp: Vec<Linear>,
    query: Linear,
    attn: Option<Attention>,
    decoder: Vec<Linear>,
    out: Linear,
}

impl TGNet {
    pub fn new(cfg: TGNetConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tgnet-init", 0));
        let d = cfg.token_dim;
        let feats = 2 * cfg.block() * cfg.block();
        let token = Linear::new(store, "tg.token", feats, d, 1.0, &mut rng);
        let pos = store.add("tg.pos", he_normal(&mut rng, &[cfg.tokens(), d], d, 0.5));
        let patch_vec = Linear::new(store, "tg.patch", d, cfg.global_dim, 1.0, &mut rng);
        let embed = store.add("tg.embed", he_normal(&mut rng, &[TOOTH_CHANNELS, cfg.embed_dim], cfg.embed_dim, 0.5));
        let mut mlp = Vec::new();
        let mut width = 3 + cfg.embed_dim + cfg.global_dim;
        for (i, &w) in cfg.point_mlp.iter().enumerate() {
            mlp.push(Linear::new(store, &format!("tg.mlp{i}"), width, w, 1.0, &mut rng));
            width = w;
        }
        let local = cfg.point_mlp[0];
        let global = *cfg.point_mlp.last().expect("validated non-empty");
        let query = Linear::new(store, "tg.query", local + global, d, 1.0, &mut rng);
        let attn = cfg.pfm.then(|| Attention {
            k: Linear::new(store, "tg.pfm.k", d, d, 1.0, &mut rng),
            v: Linear::new(store, "tg.pfm.v", d, d, 1.0, &mut rng),
        });
        let mut decoder = Vec::new();
        let mut width = d;
        for (i, &w) in cfg.decoder.iter().enumerate() {
            decoder.push(Linear::new(store, &format!("tg.dec{i}"), width, w, 1.0, &mut rng));
            width = w;
        }
        // Small output layer: the untrained net stays close to the scaled init.
        let out = Linear::new(store, "tg.out", width, 3, 0.1, &mut rng);
        Ok(Self { cfg, token, pos, patch_vec, embed, mlp, query, attn, decoder, out })
    }

    pub fn config(&self) -> &TGNetConfig {
        &self.cfg
    }

    /// `[tokens, 2 * block^2]` raw token features: the standardized crop and
    /// the mask crop, one row per grid cell.
    pub fn token_features(&self, patch: &ToothPatch) -> Result<Tensor> {
        let p = self.cfg.patch_size;
        if patch.crop.height() != p || patch.crop.width() != p {
            return Err(Error::ShapeMismatch {
                op: "tgnet patch",
                lhs: vec![patch.crop.height(), patch.crop.width()],
                rhs: vec![p, p],
            });
        }
        let px = patch.crop.pixels();
        let n = px.len() as f64;
        let mean = px.iter().sum::<f64>() / n;
        let std = (px.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let norm = |v: f64| if std > 1e-8 { (v - mean) / std } else { 0.0 };
        let (g, b) = (self.cfg.token_grid, self.cfg.block());
        let mut data = Vec::with_capacity(g * g * 2 * b * b);
        for gy in 0..g {
            for gx in 0..g {
                for y in 0..b {
                    for x in 0..b {
                        data.push(norm(px[(gy * b + y) * p + gx * b + x]));
                    }
                }
                for y in 0..b {
                    for x in 0..b {
                        data.push(patch.mask_crop.pixels()[(gy * b + y) * p + gx * b + x]);
                    }
                }
            }
        }
        Tensor::new(vec![g * g, 2 * b * b], data)
    }

    /// Generated points `[N, 3]` in the tooth's canonical frame.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, patch: &ToothPatch, init: &PointCloud) -> Result<Var> {
        let cfg = &self.cfg;
        let n = cfg.points;
        if init.len() != n {
            return Err(Error::SizeMismatch { left: init.len(), right: n });
        }
        let feats = tape.constant(self.token_features(patch)?);
        let tokens = self.token.forward_relu(tape, p, feats)?;
        let tokens = tape.add(tokens, p.var(self.pos))?;

        let pooled = tape.reduce_sum(tokens, 0)?;
        let pooled = tape.scale(pooled, 1.0 / cfg.tokens() as f64)?;
        let pooled = tape.reshape(pooled, &[1, cfg.token_dim])?;
        let gvec = self.patch_vec.forward_relu(tape, p, pooled)?;

        let ones = ones_column(tape, n);
        let gtile = tape.matmul(ones, gvec)?;
        let emb = tape.embedding(p.var(self.embed), &vec![patch.fdi.channel() - 1; n])?;
        let xyz = tape.constant(Tensor::new(vec![n, 3], init.to_flat())?);
        let mut x = tape.concat(&[xyz, emb, gtile], 1)?;
        let mut local = None;
        for layer in &self.mlp {
            x = layer.forward_relu(tape, p, x)?;
            local.get_or_insert(x);
        }
        let global = tape.reduce_max(x, 0)?;
        let width = tape.shape(global)[0];
        let global = tape.reshape(global, &[1, width])?;
        let global = tape.matmul(ones, global)?;
        let joint = tape.concat(&[local.expect("at least one layer"), global], 1)?;
        let q = self.query.forward(tape, p, joint)?;

        let mut h = match &self.attn {
            Some(a) => {
                let k = a.k.forward(tape, p, tokens)?;
                let v = a.v.forward(tape, p, tokens)?;
                pfm_forward(tape, q, k, v)?.fused
            }
            None => q,
        };
        for layer in &self.decoder {
            h = layer.forward_relu(tape, p, h)?;
        }
        let offset = self.out.forward(tape, p, h)?;
        let moved = tape.add(xyz, offset)?;
        tape.scale(moved, cfg.scale)
    }

    /// Inference with frozen parameters.
    pub fn generate(&self, store: &ParamStore, patch: &ToothPatch, init: &PointCloud) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &p, patch, init)?;
        PointCloud::from_flat(tape.value(out).data(), Frame::Canonical)
    }
}
