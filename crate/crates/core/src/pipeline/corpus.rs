//! Corpus synthesis and projection on disk.
//!
//! ```text
//! corpus/split.json                 train/val/test case ids
//! corpus/corpus.json                generator settings and content hash
//! corpus/case_<id>/...              volume, labels, teeth, gt clouds
//! corpus/case_<id>/panoramic.pgm    projected image (+ .json range)
//! corpus/case_<id>/masks/<c>.pgm    ground-truth label masks
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{CorpusConfig, ExperimentConfig};
use super::log::JsonLog;
use crate::error::{Error, Result};
use crate::formats::{read_json, write_json};
use crate::panoramic::{panoramic_project, project_labels, Image2D, MultiLabelMask, ProjectionGeometry, ProjectionParams};
use crate::synth::{assemble_jaw, case_dir, load_case, save_case, split_dataset, DatasetSplit, JawCase, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub seed: u64,
    pub cases: usize,
    pub synth: SynthConfig,
    pub projection: ProjectionParams,
    /// SHA-256 over every other file in the corpus, see [`corpus_hash`].
    pub hash: String,
}

/// A case with its projection artifacts.
#[derive(Clone, Debug)]
pub struct CorpusCase {
    pub case: JawCase,
    pub image: Image2D,
    pub mask: MultiLabelMask,
    pub geom: ProjectionGeometry,
}

pub fn corpus_dir(cfg: &CorpusConfig, out: &Path) -> PathBuf {
    cfg.dir.clone().unwrap_or_else(|| out.join("corpus"))
}

pub fn geometry_for(case: &JawCase, projection: &ProjectionParams) -> Result<ProjectionGeometry> {
    ProjectionGeometry::for_volume(&case.arch, case.volume.spec(), projection.focal_depth)
}

/// Projects one saved case and writes its image and masks.
pub fn project_case(root: &Path, case: &JawCase, projection: &ProjectionParams) -> Result<()> {
    let geom = geometry_for(case, projection)?;
    let dir = case_dir(root, case.id);
    panoramic_project(&case.volume, &geom)?.save_pgm(&dir.join("panoramic.pgm"))?;
    project_labels(&case.labels, &geom)?.save_pgm_dir(&dir.join("masks"))?;
    Ok(())
}

pub fn load_corpus_case(root: &Path, id: u32, projection: &ProjectionParams) -> Result<CorpusCase> {
    let case = load_case(root, id).map_err(|e| e.context(format!("loading case {id}")))?;
    let dir = case_dir(root, id);
    let image = Image2D::load_pgm(&dir.join("panoramic.pgm"))?;
    let mask = MultiLabelMask::load_pgm_dir(&dir.join("masks"))?;
    let geom = geometry_for(&case, projection)?;
    if (image.height(), image.width()) != (geom.height, geom.width) || (mask.height(), mask.width()) != (geom.height, geom.width) {
        return Err(Error::format(&dir, "panoramic image or masks do not match the projection geometry"));
    }
    Ok(CorpusCase { case, image, mask, geom })
}

pub fn load_split(root: &Path) -> Result<DatasetSplit> {
    read_json(&root.join("split.json"))
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel != "corpus.json" {
                out.push((rel, path));
            }
        }
    }
    Ok(())
}

/// Hex SHA-256 over `(relative path, length, bytes)` of every file under
/// `root` except `corpus.json`, in sorted path order.
pub fn corpus_hash(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path)?;
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates, saves and projects `cfg.corpus.cases` cases, then writes the
/// split and the manifest. Reruns with the same seed are byte-identical.
pub fn run_synth(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = corpus_dir(&cfg.corpus, out);
    if root.exists() {
        fs::remove_dir_all(&root)?;
    }
    fs::create_dir_all(&root)?;
    let ids: Vec<u32> = (0..cfg.corpus.cases as u32).collect();
    for &id in &ids {
        let case = assemble_jaw(&cfg.corpus.synth, id, cfg.seed).map_err(|e| e.context(format!("synthesizing case {id}")))?;
        save_case(&root, &case)?;
        project_case(&root, &case, &cfg.corpus.projection).map_err(|e| e.context(format!("projecting case {id}")))?;
        log.event("case", json!({"id": id, "present": case.present_teeth().count()}))?;
    }
    let split = split_dataset(&ids, cfg.corpus.split, cfg.seed)?;
    write_json(&root.join("split.json"), &split)?;
    let manifest = CorpusManifest {
        seed: cfg.seed,
        cases: cfg.corpus.cases,
        synth: cfg.corpus.synth.clone(),
        projection: cfg.corpus.projection,
        hash: corpus_hash(&root)?,
    };
    write_json(&root.join("corpus.json"), &manifest)?;
    log.event(
        "corpus",
        json!({"train": split.train.len(), "val": split.val.len(), "test": split.test.len(), "hash": manifest.hash}),
    )?;
    Ok(manifest)
}

/// Re-projects every case of an existing corpus with the configured
/// projection settings and refreshes the manifest hash.
pub fn run_project(cfg: &ExperimentConfig, out: &Path, log: &mut JsonLog) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = corpus_dir(&cfg.corpus, out);
    let split = load_split(&root)?;
    let mut ids: Vec<u32> = split.all().collect();
    ids.sort_unstable();
    for &id in &ids {
        let case = load_case(&root, id)?;
        project_case(&root, &case, &cfg.corpus.projection).map_err(|e| e.context(format!("projecting case {id}")))?;
        log.event("project", json!({"id": id}))?;
    }
    let mut manifest: CorpusManifest = read_json(&root.join("corpus.json"))?;
    manifest.projection = cfg.corpus.projection;
    manifest.hash = corpus_hash(&root)?;
    write_json(&root.join("corpus.json"), &manifest)?;
    log.event("corpus", json!({"hash": manifest.hash}))?;
    Ok(manifest)
}
