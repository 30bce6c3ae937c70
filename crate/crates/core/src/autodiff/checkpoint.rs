//! Checkpoint files: a little-endian `f64` blob (`.ckpt`) holding value,
//! first and second moment of every parameter, plus a JSON manifest
//! (`.ckpt.json`) with names, shapes, offsets and the Adam step.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::{ParamStore, Parameter};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements of the value block; `m` and `v` follow.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub adam_step: u64,
    pub total_f64: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut blob = Vec::with_capacity(store.num_scalars() * 24);
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for p in store.params() {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset });
        for t in [&p.value, &p.m, &p.v] {
            for x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        offset += 3 * p.value.len();
    }
    let manifest = Manifest { adam_step: store.step(), total_f64: offset, tensors };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, blob)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != manifest.total_f64 * 8 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", manifest.total_f64 * 8, bytes.len()),
        ));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n = numel(&e.shape);
        if e.offset + 3 * n > floats.len() {
            return Err(Error::format(path, format!("tensor {} exceeds blob", e.name)));
        }
        let block = |k: usize| Tensor::new(e.shape.clone(), floats[e.offset + k * n..e.offset + (k + 1) * n].to_vec());
        let id = store.add(e.name.clone(), block(0)?);
        let p: &mut Parameter = &mut store.params_mut()[id.0];
        p.m = block(1)?;
        p.v = block(2)?;
    }
    store.set_step(manifest.adam_step);
    Ok(store)
}

/// Copies values and moments from `src` into `dst`, matching by name and
/// shape. Fails if the parameter lists differ.
pub fn restore_into(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::SizeMismatch { left: dst.len(), right: src.len() });
    }
    for (d, s) in dst.params_mut().iter_mut().zip(src.params()) {
        if d.name != s.name || d.value.shape() != s.value.shape() {
            return Err(Error::Config(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                s.name,
                s.value.shape(),
                d.name,
                d.value.shape()
            )));
        }
        *d = s.clone();
    }
    dst.set_step(src.step());
    Ok(())
}
