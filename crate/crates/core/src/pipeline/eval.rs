//! Test-split evaluation: predict masks, extract patches, generate,
//! optionally restore to the jaw frame, then score against ground truth.
//!
//! Prediction never reads ground-truth clouds; they enter only in
//! [`score_case`].

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use super::config::{EvalFrame, ExperimentConfig, MaskSource};
use super::corpus::{corpus_dir, load_corpus_case, load_split, CorpusCase};
use super::log::JsonLog;
use super::train::{eval_init, tooth_key, GenModel, SegModel};
use crate::error::{Error, Result};
use crate::geom::{apply_transform, FdiTooth, PointCloud};
use crate::metrics::{aggregate, evaluate_tooth, Report, ToothResult};
use crate::nets::{extract_patches, restore_position, ToothPatch};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub case_id: u32,
    pub fdi: FdiTooth,
    /// False when the mask missed the tooth and a blank patch was used.
    pub detected: bool,
    pub canonical: PointCloud,
    /// Jaw-frame cloud; `None` outside global evaluation or when the
    /// position cannot be derived for a missed tooth.
    pub global: Option<PointCloud>,
}

/// Generates every ground-truth-present tooth of `cc`. Missed teeth get a
/// blank patch, so the generator falls back to its class prior.
pub fn predict_case(
    cc: &CorpusCase,
    seg: Option<&SegModel>,
    gen: &GenModel,
    cfg: &ExperimentConfig,
) -> Result<Vec<Prediction>> {
    let mask = match (cfg.eval.masks, seg) {
        (MaskSource::Gt, _) => cc.mask.clone(),
        (MaskSource::Predicted, Some(m)) => m.predict(cc)?,
        (MaskSource::Predicted, None) => {
            return Err(Error::Config("predicted-mask evaluation needs a segmentation model".into()))
        }
    };
    let mut patches: BTreeMap<FdiTooth, ToothPatch> =
        extract_patches(&cc.image, &mask, &cfg.patch)?.into_iter().map(|p| (p.fdi, p)).collect();
    let points = gen.net.config().points;
    let mut out = Vec::new();
    for rec in cc.case.present_teeth() {
        let fdi = rec.fdi;
        let (patch, detected) = match patches.remove(&fdi) {
            Some(p) => (p, true),
            None => (ToothPatch::blank(fdi, cfg.patch.size), false),
        };
        let init = eval_init(cfg.seed, tooth_key(cc.case.id, &patch), points)?;
        let canonical = gen.generate(&patch, &init)?;
        let global = match cfg.eval.frame {
            EvalFrame::Canonical => None,
            EvalFrame::Global => {
                match restore_position(&canonical, fdi, &cc.case, cfg.eval.restore, Some(&patch), Some(&cc.geom)) {
                    Ok(c) => Some(c),
                    Err(Error::MissingTooth(_)) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        out.push(Prediction { case_id: cc.case.id, fdi, detected, canonical, global });
    }
    Ok(out)
}

/// Metrics for the predictions of one case. In the global frame, teeth
/// without a restored position are skipped.
pub fn score_case(cc: &CorpusCase, preds: &[Prediction], cfg: &ExperimentConfig) -> Result<Vec<ToothResult>> {
    let mut out = Vec::new();
    for p in preds {
        let gt = cc.case.gt_cloud(p.fdi)?;
        let (pred, gt) = match cfg.eval.frame {
            EvalFrame::Canonical => (p.canonical.clone(), gt.clone()),
            EvalFrame::Global => match &p.global {
                Some(g) => (g.clone(), apply_transform(gt, cc.case.gt_transform(p.fdi)?)),
                None => continue,
            },
        };
        let seed = derive_seed(cfg.seed, "emd", p.case_id as u64 * 64 + p.fdi.channel() as u64);
        out.push(evaluate_tooth(p.case_id, p.fdi, &pred, &gt, &cfg.eval.metrics, seed)?);
    }
    Ok(out)
}

/// Predicts and scores the cases `ids` of the corpus at `root`, in
/// parallel over cases; results keep the order of `ids`.
pub fn evaluate_cases(
    cfg: &ExperimentConfig,
    root: &Path,
    ids: &[u32],
    seg: Option<&SegModel>,
    gen: &GenModel,
    log: &mut JsonLog,
) -> Result<Vec<ToothResult>> {
    let per_case: Vec<Result<(Vec<Prediction>, Vec<ToothResult>)>> = ids
        .par_iter()
        .map(|&id| {
            let cc = load_corpus_case(root, id, &cfg.corpus.projection)?;
            let preds = predict_case(&cc, seg, gen, cfg).map_err(|e| e.context(format!("predicting case {id}")))?;
            let scores = score_case(&cc, &preds, cfg).map_err(|e| e.context(format!("scoring case {id}")))?;
            Ok((preds, scores))
        })
        .collect();
    let mut results = Vec::new();
    for r in per_case {
        let (preds, scores) = r?;
        for p in preds.iter().filter(|p| !p.detected || (cfg.eval.frame == EvalFrame::Global && p.global.is_none())) {
            log.event(
                "missed_tooth",
                json!({"case": p.case_id, "fdi": p.fdi.code(), "detected": p.detected, "scored": p.global.is_some() || cfg.eval.frame == EvalFrame::Canonical}),
            )?;
        }
        results.extend(scores);
    }
    Ok(results)
}

/// Aggregates `results` under `method`, logging the summary line.
pub fn summarize(method: &str, results: &[ToothResult], log: &mut JsonLog) -> Result<crate::metrics::MethodReport> {
    let m = aggregate(method, results)?;
    log.event(
        "eval",
        json!({"method": method, "teeth": m.count, "iou": m.iou.mean, "cd": m.cd.mean, "emd": m.emd.mean}),
    )?;
    Ok(m)
}

/// Evaluates the models trained under `out` on the test split and writes
/// `out/eval/report.{json,csv}`.
pub fn run_eval(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<Report> {
    cfg.validate()?;
    let root = corpus_dir(&cfg.corpus, out);
    let split = load_split(&root)?;
    let seg = match cfg.eval.masks {
        MaskSource::Predicted => Some(SegModel::load(&out.join("seg"))?.0),
        MaskSource::Gt => None,
    };
    let (gen, _) = GenModel::load(&out.join("gen"))?;
    let results = evaluate_cases(cfg, &root, &split.test, seg.as_ref(), &gen, log)?;
    let report = Report::new(vec![summarize("model", &results, log)?]);
    report.save(&out.join("eval"))?;
    Ok(report)
}
