//! Experiment orchestration: corpus synthesis, two-stage training,
//! evaluation and the ablation table.
//!
//! Every runner takes the experiment config, an output directory and a
//! JSON-lines log. With the default layout all stages share one `out`:
//!
//! ```text
//! out/corpus/     synthesized cases, projections, split
//! out/seg/        segmentation checkpoint and card
//! out/gen/        generator checkpoint and card
//! out/eval/       report.json, report.csv
//! out/ablation/   per-variant checkpoints and the ablation report
//! ```

mod ablation;
mod config;
mod corpus;
mod eval;
mod log;
mod train;

use std::path::Path;

pub use ablation::run_ablation;
pub use config::{AblationRow, CorpusConfig, EvalFrame, EvalOptions, ExperimentConfig, MaskSource, Toggles, ABLATION_ROWS};
pub use corpus::{
    corpus_dir, corpus_hash, geometry_for, load_corpus_case, load_split, project_case, run_project, run_synth,
    CorpusCase, CorpusManifest,
};
pub use eval::{evaluate_cases, predict_case, run_eval, score_case, summarize, Prediction};
pub use log::JsonLog;
pub use train::{
    eval_init, gen_samples, mask_iou, mean_chamfer, tooth_key, train_gen, train_seg, GenCard, GenModel, GenSample,
    SegCard, SegModel, CHECKPOINT, MODEL_CARD,
};

use crate::error::Result;

/// Trains the segmentation net on the corpus into `out/seg`.
pub fn run_train_seg(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<SegCard> {
    train_seg(cfg, &corpus_dir(&cfg.corpus, out), &out.join("seg"), log)
}

/// Trains the generator into `out/gen`, reading `out/seg` when patches
/// come from predicted masks.
pub fn run_train_gen(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<GenCard> {
    let seg = if cfg.gen_gt_masks { None } else { Some(SegModel::load(&out.join("seg"))?.0) };
    train_gen(cfg, &corpus_dir(&cfg.corpus, out), &out.join("gen"), seg.as_ref(), log)
}
