//! Experiment configuration, presets and the ablation row table.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::LrSchedule;
use crate::error::{Error, Result};
use crate::losses::SegLossConfig;
use crate::metrics::MetricConfig;
use crate::nets::{PatchConfig, RestoreMode, SegHead, SegNetConfig, TGNetConfig};
use crate::panoramic::ProjectionParams;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub cases: usize,
    /// Train/val/test ratios.
    pub split: [u32; 3],
    pub synth: SynthConfig,
    pub projection: ProjectionParams,
    /// Existing corpus directory; defaults to `<out>/corpus`.
    pub dir: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            cases: 60,
            split: [8, 1, 1],
            synth: SynthConfig::coarse(),
            projection: ProjectionParams::default(),
            dir: None,
        }
    }
}

/// Loss and module switches. With `mb` and `ub` both off the segmentation
/// net trains on cross-entropy alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub mb: bool,
    pub ub: bool,
    pub rt: bool,
    pub pfm: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::FULL
    }
}

impl Toggles {
    pub const FULL: Toggles = Toggles { mb: true, ub: true, rt: true, pfm: true };
    pub const BASELINE: Toggles = Toggles { mb: false, ub: false, rt: false, pfm: false };

    /// Effective segmentation objective. UB with gamma 0 is plain
    /// cross-entropy, so UB off means `lambda_ub = 1, gamma = 0`.
    pub fn seg_loss(&self, base: &SegLossConfig) -> SegLossConfig {
        SegLossConfig {
            lambda_mb: if self.mb { base.lambda_mb } else { 0.0 },
            lambda_ub: if self.ub { base.lambda_ub } else { 1.0 },
            gamma: if self.ub { base.gamma } else { 0.0 },
        }
    }

    /// The part of the toggles that affects segmentation training.
    pub fn seg_key(&self) -> (bool, bool) {
        (self.mb, self.ub)
    }

    /// The part of the toggles that affects generator training.
    pub fn gen_key(&self) -> (bool, bool) {
        (self.rt, self.pfm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// Masks predicted by the trained segmentation network.
    Predicted,
    /// Ground-truth projected label masks.
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFrame {
    /// Compare in each tooth's canonical frame.
    Canonical,
    /// Restore predictions into the jaw frame first.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub masks: MaskSource,
    pub frame: EvalFrame,
    pub restore: RestoreMode,
    pub metrics: MetricConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            masks: MaskSource::Predicted,
            frame: EvalFrame::Canonical,
            restore: RestoreMode::Derived,
            metrics: MetricConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub seg: SegNetConfig,
    /// Base weights; the toggles switch terms on and off.
    pub seg_loss: SegLossConfig,
    /// `pfm` is overridden by the toggles.
    pub gen: TGNetConfig,
    pub patch: PatchConfig,
    pub toggles: Toggles,
    pub seg_epochs: u32,
    pub gen_epochs: u32,
    /// Panoramic images per optimizer step, for both stages.
    pub minibatch: usize,
    pub seg_lr: LrSchedule,
    pub gen_lr: LrSchedule,
    /// Generator training patches come from ground-truth masks.
    pub gen_gt_masks: bool,
    /// Use only the first `n` training cases (smoke runs).
    pub train_limit: Option<usize>,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Settings that train the whole pipeline on one core in minutes.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            seg: SegNetConfig { head: SegHead::Softmax, ..SegNetConfig::default() },
            seg_loss: SegLossConfig::default(),
            gen: TGNetConfig::desk(),
            patch: PatchConfig::default(),
            toggles: Toggles::FULL,
            seg_epochs: 30,
            gen_epochs: 30,
            minibatch: 2,
            seg_lr: LrSchedule { base: 3e-3, decay: 0.7, step_epochs: 10 },
            gen_lr: LrSchedule { base: 3e-3, decay: 0.7, step_epochs: 10 },
            gen_gt_masks: true,
            train_limit: None,
            eval: EvalOptions::default(),
        }
    }

    /// Full network widths and the 1e-5 step schedule. Far too slow
    /// for a single core; kept so the full configuration is expressible.
    pub fn full() -> Self {
        Self {
            seg: SegNetConfig { base: 64, depth: 4, coords: false, ..SegNetConfig::default() },
            gen: TGNetConfig { points: 1024, ..TGNetConfig::default() },
            seg_lr: LrSchedule::default(),
            gen_lr: LrSchedule::default(),
            seg_epochs: 100,
            gen_epochs: 100,
            ..Self::desk()
        }
    }

    /// One epoch on four training cases of a ten-case corpus.
    pub fn smoke() -> Self {
        let mut cfg = Self::desk();
        cfg.corpus.cases = 10;
        cfg.seg.base = 4;
        cfg.gen.points = 64;
        cfg.seg_epochs = 1;
        cfg.gen_epochs = 1;
        cfg.train_limit = Some(4);
        cfg
    }

    /// Reduced scale for running all seven ablation rows.
    pub fn ablation() -> Self {
        let mut cfg = Self::desk();
        cfg.corpus.cases = 20;
        cfg.seg_epochs = 30;
        cfg.seg_lr.step_epochs = 15;
        cfg.gen_epochs = 12;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.synth.validate()?;
        self.seg.validate()?;
        self.seg_loss.validate()?;
        self.gen.validate()?;
        self.patch.validate()?;
        if self.corpus.cases < 10 {
            return Err(Error::Config(format!("corpus needs at least 10 cases, got {}", self.corpus.cases)));
        }
        if self.corpus.split.iter().any(|&r| r == 0) {
            return Err(Error::Config(format!("split ratios must all be positive, got {:?}", self.corpus.split)));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be >= 1".into()));
        }
        if self.patch.size != self.gen.patch_size {
            return Err(Error::Config(format!(
                "patch size {} differs from the generator's {}",
                self.patch.size, self.gen.patch_size
            )));
        }
        if self.train_limit == Some(0) {
            return Err(Error::Config("train_limit must be >= 1".into()));
        }
        for (name, s) in [("seg_lr", &self.seg_lr), ("gen_lr", &self.gen_lr)] {
            if !(s.base > 0.0 && s.base.is_finite() && s.decay > 0.0 && s.decay <= 1.0) {
                return Err(Error::Config(format!("{name} needs base > 0 and decay in (0, 1]")));
            }
        }
        if !(self.corpus.projection.focal_depth > 0.0) {
            return Err(Error::Config("focal depth must be > 0".into()));
        }
        if !(self.eval.metrics.iou_spacing > 0.0) {
            return Err(Error::Config("iou spacing must be > 0".into()));
        }
        Ok(())
    }

    pub fn seg_net(&self) -> SegNetConfig {
        self.seg
    }

    pub fn seg_objective(&self) -> SegLossConfig {
        self.toggles.seg_loss(&self.seg_loss)
    }

    pub fn gen_net(&self) -> TGNetConfig {
        TGNetConfig { pfm: self.toggles.pfm, ..self.gen.clone() }
    }

    pub fn with_toggles(&self, toggles: Toggles) -> Self {
        Self { toggles, ..self.clone() }
    }
}

/// One line of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationRow {
    pub name: &'static str,
    pub toggles: Toggles,
}

const fn row(name: &'static str, mb: bool, ub: bool, rt: bool, pfm: bool) -> AblationRow {
    AblationRow { name, toggles: Toggles { mb, ub, rt, pfm } }
}

/// The seven ablation rows in table order, baseline first, full model last.
pub const ABLATION_ROWS: [AblationRow; 7] = [
    row("Unet + PointNet", false, false, false, false),
    row("Unet + MB Loss + PointNet", true, false, false, false),
    row("Unet + UB Loss + PointNet", false, true, false, false),
    row("PXSegNet + PointNet", true, true, false, false),
    row("PXSegNet + PointNet + RT Loss", true, true, true, false),
    row("PXSegNet + PointNet + PFM", true, true, false, true),
    row("PXSegNet + PointNet + RT Loss + PFM", true, true, true, true),
];
