//! The seven-row ablation. Trainings are cached by the toggles they
//! depend on: four segmentation variants and four generator variants.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use super::config::{ExperimentConfig, ABLATION_ROWS};
use super::corpus::{corpus_dir, corpus_hash, load_split, run_synth};
use super::eval::{evaluate_cases, summarize};
use super::log::JsonLog;
use super::train::{train_gen, train_seg, GenModel, SegModel};
use crate::error::Result;
use crate::metrics::Report;

/// Trains and evaluates every row under `out/ablation` and writes the
/// report there. Synthesizes the corpus first when it does not exist.
/// A failing row aborts the run with the row name in the error.
pub fn run_ablation(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<Report> {
    cfg.validate()?;
    let root = corpus_dir(&cfg.corpus, out);
    if !root.join("split.json").exists() {
        run_synth(cfg, out, log)?;
    }
    let split = load_split(&root)?;
    log.event("ablation_start", json!({"corpus_hash": corpus_hash(&root)?, "rows": ABLATION_ROWS.len()}))?;
    let dir = out.join("ablation");
    let mut segs: BTreeMap<(bool, bool), SegModel> = BTreeMap::new();
    let mut gens: BTreeMap<(bool, bool), GenModel> = BTreeMap::new();
    let mut methods = Vec::new();
    for row in ABLATION_ROWS {
        let run = |segs: &mut BTreeMap<_, _>, gens: &mut BTreeMap<_, _>, log: &mut JsonLog| -> Result<_> {
            let rc = cfg.with_toggles(row.toggles);
            let (mb, ub) = row.toggles.seg_key();
            if !segs.contains_key(&(mb, ub)) {
                let d = dir.join(format!("seg_mb{}_ub{}", mb as u8, ub as u8));
                log.event("ablation_train", json!({"row": row.name, "stage": "seg"}))?;
                train_seg(&rc, &root, &d, log)?;
                segs.insert((mb, ub), SegModel::load(&d)?.0);
            }
            let (rt, pfm) = row.toggles.gen_key();
            if !gens.contains_key(&(rt, pfm)) {
                let d = dir.join(format!("gen_rt{}_pfm{}", rt as u8, pfm as u8));
                log.event("ablation_train", json!({"row": row.name, "stage": "gen"}))?;
                let seg = segs.get(&(mb, ub));
                train_gen(&rc, &root, &d, seg, log)?;
                gens.insert((rt, pfm), GenModel::load(&d)?.0);
            }
            let results = evaluate_cases(&rc, &root, &split.test, segs.get(&(mb, ub)), &gens[&(rt, pfm)], log)?;
            summarize(row.name, &results, log)
        };
        let m = run(&mut segs, &mut gens, log).map_err(|e| e.context(format!("ablation row \"{}\"", row.name)))?;
        methods.push(m);
    }
    let report = Report::new(methods);
    report.save(&dir)?;
    Ok(report)
}
