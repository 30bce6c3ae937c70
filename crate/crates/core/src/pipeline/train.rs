//! Sequential two-stage training: the segmentation net on panoramic
//! images, then the point generator on per-tooth patches.
//!
//! Each stage keeps the checkpoint of its best validation epoch in
//! `<dir>/best.ckpt` with a `model.json` card describing the network.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::corpus::{load_corpus_case, load_split, CorpusCase};
use super::log::JsonLog;
use crate::autodiff::{load_checkpoint, restore_into, save_checkpoint, AdamConfig, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::formats::{read_json, write_json};
use crate::geom::{sample_sphere_points, PointCloud, MASK_CHANNELS};
use crate::losses::{indexwise_sq_loss_tape, rt_loss_tape, seg_loss_tape, SegLossConfig};
use crate::metrics::chamfer_distance;
use crate::nets::{extract_patches, mask_to_pixel_major, PatchConfig, SegNet, SegNetConfig, TGNet, TGNetConfig, ToothPatch};
use crate::panoramic::MultiLabelMask;
use crate::seeding::{derive_seed, rng_for};

pub const CHECKPOINT: &str = "best.ckpt";
pub const MODEL_CARD: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegCard {
    pub net: SegNetConfig,
    pub loss: SegLossConfig,
    /// `None` when no epoch ran and the checkpoint holds the initialization.
    pub best_epoch: Option<u32>,
    pub val_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCard {
    pub net: TGNetConfig,
    pub rt: bool,
    pub best_epoch: Option<u32>,
    /// `None` when the validation split has no teeth.
    pub val_cd: Option<f64>,
}

pub struct SegModel {
    pub net: SegNet,
    pub store: ParamStore,
}

impl SegModel {
    pub fn init(cfg: SegNetConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = SegNet::new(cfg, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn load(dir: &Path) -> Result<(Self, SegCard)> {
        let card: SegCard = read_json(&dir.join(MODEL_CARD))?;
        let mut model = Self::init(card.net, 0)?;
        restore_into(&mut model.store, &load_checkpoint(&dir.join(CHECKPOINT))?)?;
        Ok((model, card))
    }

    pub fn predict(&self, cc: &CorpusCase) -> Result<MultiLabelMask> {
        self.net.predict(&self.store, &cc.image)
    }
}

pub struct GenModel {
    pub net: TGNet,
    pub store: ParamStore,
}

impl GenModel {
    pub fn init(cfg: TGNetConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = TGNet::new(cfg, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn load(dir: &Path) -> Result<(Self, GenCard)> {
        let card: GenCard = read_json(&dir.join(MODEL_CARD))?;
        let mut model = Self::init(card.net.clone(), 0)?;
        restore_into(&mut model.store, &load_checkpoint(&dir.join(CHECKPOINT))?)?;
        Ok((model, card))
    }

    pub fn generate(&self, patch: &ToothPatch, init: &PointCloud) -> Result<PointCloud> {
        self.net.generate(&self.store, patch, init)
    }
}

/// Micro-averaged IoU of binarized tooth channels (background excluded);
/// 1 when both masks are empty.
pub fn mask_iou(pred: &MultiLabelMask, gt: &MultiLabelMask, tau: f64) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch {
            op: "mask_iou",
            lhs: vec![pred.height(), pred.width()],
            rhs: vec![gt.height(), gt.width()],
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for c in 1..MASK_CHANNELS {
        for (&p, &g) in pred.channel(c).iter().zip(gt.channel(c)) {
            let (p, g) = (p >= tau, g >= 0.5);
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-tooth generator input and target; `key` identifies the tooth
/// within the corpus for seeding.
pub struct GenSample {
    pub case_id: u32,
    pub key: u64,
    pub patch: ToothPatch,
    pub target: PointCloud,
}

pub fn tooth_key(case_id: u32, patch: &ToothPatch) -> u64 {
    case_id as u64 * MASK_CHANNELS as u64 + patch.fdi.channel() as u64
}

/// Fixed initial cloud for inference on one tooth.
pub fn eval_init(seed: u64, key: u64, points: usize) -> Result<PointCloud> {
    sample_sphere_points(points, derive_seed(seed, "eval-init", key))
}

fn load_cases(root: &Path, ids: &[u32], cfg: &ExperimentConfig) -> Result<Vec<CorpusCase>> {
    ids.iter().map(|&id| load_corpus_case(root, id, &cfg.corpus.projection)).collect()
}

fn train_ids(cfg: &ExperimentConfig, mut ids: Vec<u32>) -> Vec<u32> {
    if let Some(n) = cfg.train_limit {
        ids.truncate(n);
    }
    ids
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One optimizer step on a minibatch of images; returns the mean loss.
fn seg_step(
    model: &mut SegModel,
    cases: &[CorpusCase],
    targets: &[Tensor],
    batch: &[usize],
    objective: &SegLossConfig,
    lr: f64,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let mut total = None;
    for &i in batch {
        let probs = model.net.probabilities(&mut tape, &p, &cases[i].image)?;
        let l = seg_loss_tape(&mut tape, probs, &targets[i], objective)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let value = tape.value(loss).item()?;
    check_finite(value, "segmentation loss")?;
    let grads = tape.backward(loss)?;
    model.store.adam_step(&grads, &p, lr, adam)?;
    Ok(value)
}

/// One optimizer step on the teeth of a minibatch of images.
fn gen_step(
    model: &mut GenModel,
    teeth: &[&GenSample],
    cfg: &ExperimentConfig,
    epoch: u32,
    lr: f64,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let mut total = None;
    for s in teeth {
        let seed = derive_seed(cfg.seed, "train-init", (epoch as u64) << 40 | s.key);
        let init = sample_sphere_points(cfg.gen.points, seed)?;
        let pred = model.net.forward(&mut tape, &p, &s.patch, &init)?;
        let target = tape.constant(Tensor::new(vec![s.target.len(), 3], s.target.to_flat())?);
        let l = if cfg.toggles.rt {
            rt_loss_tape(&mut tape, pred, target)?
        } else {
            indexwise_sq_loss_tape(&mut tape, pred, target)?
        };
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let loss = tape.scale(total.expect("non-empty batch"), 1.0 / teeth.len() as f64)?;
    let value = tape.value(loss).item()?;
    check_finite(value, "generator loss")?;
    let grads = tape.backward(loss)?;
    model.store.adam_step(&grads, &p, lr, adam)?;
    Ok(value)
}

/// Trains the segmentation net on the corpus at `root` and keeps the best
/// validation-IoU epoch in `dir`.
pub fn train_seg(cfg: &ExperimentConfig, root: &Path, dir: &Path, log: &mut JsonLog) -> Result<SegCard> {
    cfg.validate()?;
    let split = load_split(root)?;
    let train = load_cases(root, &train_ids(cfg, split.train.clone()), cfg)?;
    let val = load_cases(root, &split.val, cfg)?;
    let targets: Vec<Tensor> = train.iter().map(|cc| mask_to_pixel_major(&cc.mask)).collect();
    let objective = cfg.seg_objective();
    let mut model = SegModel::init(cfg.seg_net(), cfg.seed)?;
    let adam = AdamConfig::default();
    let val_iou = |model: &SegModel| -> Result<f64> {
        let mut total = 0.0;
        for cc in &val {
            total += mask_iou(&model.predict(cc)?, &cc.mask, cfg.patch.tau)?;
        }
        Ok(total / val.len().max(1) as f64)
    };
    log.event(
        "seg_start",
        json!({"train": train.len(), "val": val.len(), "params": model.store.num_scalars(), "head": model.net.config().head, "loss": objective}),
    )?;
    let mut card = SegCard { net: cfg.seg_net(), loss: objective, best_epoch: None, val_iou: f64::NEG_INFINITY };
    if cfg.seg_epochs == 0 {
        card.val_iou = val_iou(&model)?;
        save_checkpoint(&model.store, &dir.join(CHECKPOINT))?;
    }
    let mut step = 0usize;
    for epoch in 0..cfg.seg_epochs {
        let lr = cfg.seg_lr.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, "seg-order", epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let value = seg_step(&mut model, &train, &targets, batch, &objective, lr, &adam)
                .map_err(|e| e.context(format!("segmentation epoch {epoch} step {step}")))?;
            epoch_loss += value * batch.len() as f64;
            step += 1;
        }
        let loss = epoch_loss / train.len() as f64;
        let iou = val_iou(&model).map_err(|e| e.context(format!("segmentation validation after epoch {epoch}")))?;
        log.event("seg_epoch", json!({"epoch": epoch, "loss": loss, "val_iou": iou, "lr": lr}))?;
        if iou > card.val_iou {
            card.val_iou = iou;
            card.best_epoch = Some(epoch);
            save_checkpoint(&model.store, &dir.join(CHECKPOINT))?;
        }
    }
    write_json(&dir.join(MODEL_CARD), &card)?;
    log.event("seg_done", json!({"best_epoch": card.best_epoch, "val_iou": card.val_iou}))?;
    Ok(card)
}

/// Patches of every ground-truth tooth found in `cc`, paired with its
/// subsampled ground-truth cloud. Teeth the mask misses are skipped.
pub fn gen_samples(cc: &CorpusCase, mask: &MultiLabelMask, patch: &PatchConfig, points: usize, seed: u64) -> Result<Vec<GenSample>> {
    let mut out = Vec::new();
    for p in extract_patches(&cc.image, mask, patch)? {
        let Ok(gt) = cc.case.gt_cloud(p.fdi) else { continue };
        let key = tooth_key(cc.case.id, &p);
        let target = gt.subsample(points, derive_seed(seed, "gt-subsample", key))?;
        out.push(GenSample { case_id: cc.case.id, key, patch: p, target });
    }
    Ok(out)
}

fn samples_for(
    cases: &[CorpusCase],
    cfg: &ExperimentConfig,
    seg: Option<&SegModel>,
) -> Result<Vec<Vec<GenSample>>> {
    cases
        .iter()
        .map(|cc| {
            let mask = match seg {
                Some(m) if !cfg.gen_gt_masks => m.predict(cc)?,
                _ => cc.mask.clone(),
            };
            gen_samples(cc, &mask, &cfg.patch, cfg.gen.points, cfg.seed)
        })
        .collect()
}

/// Mean Chamfer distance of generated teeth against the full ground-truth
/// clouds, in the canonical frame; `None` without samples.
pub fn mean_chamfer(model: &GenModel, cases: &[CorpusCase], samples: &[Vec<GenSample>], seed: u64) -> Result<Option<f64>> {
    let (mut total, mut n) = (0.0, 0usize);
    for (cc, ss) in cases.iter().zip(samples) {
        for s in ss {
            let init = eval_init(seed, s.key, model.net.config().points)?;
            let pred = model.generate(&s.patch, &init)?;
            total += chamfer_distance(&pred, cc.case.gt_cloud(s.patch.fdi)?)?;
            n += 1;
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// Trains the point generator and keeps the best validation-Chamfer epoch
/// in `dir`. Patches come from ground-truth masks when `gen_gt_masks` is
/// set, otherwise from `seg` predictions.
pub fn train_gen(
    cfg: &ExperimentConfig,
    root: &Path,
    dir: &Path,
    seg: Option<&SegModel>,
    log: &mut JsonLog,
) -> Result<GenCard> {
    cfg.validate()?;
    if !cfg.gen_gt_masks && seg.is_none() {
        return Err(Error::Config("generator training from predicted masks needs a segmentation model".into()));
    }
    let split = load_split(root)?;
    let train = load_cases(root, &train_ids(cfg, split.train.clone()), cfg)?;
    let val = load_cases(root, &split.val, cfg)?;
    let train_samples = samples_for(&train, cfg, seg)?;
    let val_samples = samples_for(&val, cfg, seg)?;
    let count: usize = train_samples.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::NoTeethExtracted(format!(
            "no tooth patches in {} training cases (masks from {}, tau {}, min_area {})",
            train.len(),
            if cfg.gen_gt_masks { "ground truth" } else { "segmentation" },
            cfg.patch.tau,
            cfg.patch.min_area
        )));
    }
    let mut model = GenModel::init(cfg.gen_net(), cfg.seed)?;
    let adam = AdamConfig::default();
    log.event(
        "gen_start",
        json!({"train_teeth": count, "val_teeth": val_samples.iter().map(Vec::len).sum::<usize>(), "params": model.store.num_scalars(), "rt": cfg.toggles.rt, "pfm": cfg.toggles.pfm}),
    )?;
    let mut card = GenCard { net: cfg.gen_net(), rt: cfg.toggles.rt, best_epoch: None, val_cd: None };
    if cfg.gen_epochs == 0 {
        card.val_cd = mean_chamfer(&model, &val, &val_samples, cfg.seed)?;
        save_checkpoint(&model.store, &dir.join(CHECKPOINT))?;
    }
    let mut step = 0usize;
    for epoch in 0..cfg.gen_epochs {
        let lr = cfg.gen_lr.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, "gen-order", epoch as u64));
        let (mut epoch_loss, mut epoch_teeth) = (0.0, 0usize);
        for batch in order.chunks(cfg.minibatch) {
            let teeth: Vec<&GenSample> = batch.iter().flat_map(|&i| &train_samples[i]).collect();
            if teeth.is_empty() {
                continue;
            }
            let value = gen_step(&mut model, &teeth, cfg, epoch, lr, &adam)
                .map_err(|e| e.context(format!("generator epoch {epoch} step {step}")))?;
            epoch_loss += value * teeth.len() as f64;
            epoch_teeth += teeth.len();
            step += 1;
        }
        let cd = mean_chamfer(&model, &val, &val_samples, cfg.seed)
            .map_err(|e| e.context(format!("generator validation after epoch {epoch}")))?;
        let loss = epoch_loss / epoch_teeth.max(1) as f64;
        log.event("gen_epoch", json!({"epoch": epoch, "loss": loss, "val_cd": cd, "lr": lr}))?;
        if let Some(v) = cd {
            check_finite(v, &format!("generator validation after epoch {epoch}"))?;
        }
        // Without validation teeth every epoch counts as best: the last is kept.
        let better = match (cd, card.val_cd) {
            (Some(v), Some(best)) => v < best,
            _ => true,
        };
        if better {
            card.val_cd = cd;
            card.best_epoch = Some(epoch);
            save_checkpoint(&model.store, &dir.join(CHECKPOINT))?;
        }
    }
    write_json(&dir.join(MODEL_CARD), &card)?;
    log.event("gen_done", json!({"best_epoch": card.best_epoch, "val_cd": card.val_cd}))?;
    Ok(card)
}
