//! Parameter checkpoints: one shape-prefixed `f32` file per parameter (and
//! per optimizer moment), plus a JSON manifest listing names, shapes and
//! SHA-256 checksums.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::{ParamStore, Tensor};
use crate::binfmt;
use crate::error::{io_err, json_err, Error, Result};
use crate::Scalar;

pub const MANIFEST: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub m: Vec<Entry>,
    pub v: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub params: Vec<Entry>,
    pub optimizer: Option<OptimizerEntry>,
    /// Free-form metadata owned by the caller (config snapshot, epoch, ...).
    pub meta: serde_json::Value,
}

/// Everything read back from a checkpoint directory.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub params: Vec<(String, Tensor<T>)>,
    pub optimizer: Option<AdamState<T>>,
    pub meta: serde_json::Value,
}

fn write_group<T: Scalar>(dir: &Path, sub: &str, idx: usize, name: &str, t: &Tensor<T>) -> Result<Entry> {
    let file = format!("{sub}/{idx:04}_{name}.bin");
    let bytes = binfmt::encode(t.shape(), t.data().iter().map(|x| x.as_f64() as f32));
    binfmt::write_file(&dir.join(&file), &bytes)?;
    Ok(Entry { name: name.to_string(), shape: t.shape().to_vec(), sha256: binfmt::sha256_hex(&bytes), file })
}

fn read_group<T: Scalar>(dir: &Path, e: &Entry) -> Result<Tensor<T>> {
    let path = dir.join(&e.file);
    let bytes = binfmt::read_file(&path)?;
    let bad = |reason: String| Error::Checkpoint { path: path.clone(), reason };
    if binfmt::sha256_hex(&bytes) != e.sha256 {
        return Err(bad("checksum mismatch".into()));
    }
    let (shape, values) = binfmt::decode(&bytes).map_err(bad)?;
    if shape != e.shape {
        return Err(bad(format!("header shape {shape:?} disagrees with manifest {:?}", e.shape)));
    }
    Ok(Tensor::new(shape, values.into_iter().map(|x| T::of(x as f64)).collect()))
}

pub fn save<T: Scalar>(dir: &Path, store: &ParamStore<T>, optimizer: Option<&AdamState<T>>, meta: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut params = Vec::with_capacity(store.len());
    for (i, (name, t)) in store.names().iter().zip(store.values()).enumerate() {
        params.push(write_group(dir, "params", i, name, t)?);
    }
    let optimizer = match optimizer {
        Some(st) => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (i, name) in store.names().iter().enumerate() {
                m.push(write_group(dir, "optim_m", i, name, &st.m[i])?);
                v.push(write_group(dir, "optim_v", i, name, &st.v[i])?);
            }
            Some(OptimizerEntry { step: st.step, m, v })
        }
        None => None,
    };
    let manifest = Manifest { format: FORMAT_VERSION, params, optimizer, meta };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&path))?;
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(json_err(&path))?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Checkpoint { path, reason: format!("unsupported format {}", manifest.format) });
    }
    Ok(manifest)
}

pub fn load<T: Scalar>(dir: &Path) -> Result<Loaded<T>> {
    let manifest = read_manifest(dir)?;
    let params = manifest
        .params
        .iter()
        .map(|e| Ok((e.name.clone(), read_group(dir, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let optimizer = match &manifest.optimizer {
        Some(o) => Some(AdamState {
            step: o.step,
            m: o.m.iter().map(|e| read_group(dir, e)).collect::<Result<_>>()?,
            v: o.v.iter().map(|e| read_group(dir, e)).collect::<Result<_>>()?,
        }),
        None => None,
    };
    Ok(Loaded { params, optimizer, meta: manifest.meta })
}

/// Copy loaded values into `store`, requiring identical names and shapes.
pub fn restore<T: Scalar>(store: &mut ParamStore<T>, loaded: &Loaded<T>, dir: &Path) -> Result<()> {
    let mismatch = |reason: String| Error::Checkpoint { path: PathBuf::from(dir), reason };
    if loaded.params.len() != store.len() {
        return Err(mismatch(format!("checkpoint has {} parameters, model has {}", loaded.params.len(), store.len())));
    }
    let ids: Vec<_> = store.ids().collect();
    for (i, (id, (name, t))) in ids.into_iter().zip(&loaded.params).enumerate() {
        let expected = &store.names()[i];
        if expected != name || store.get(id).shape() != t.shape() {
            return Err(mismatch(format!("parameter {name} {:?} does not match model {expected} {:?}", t.shape(), store.get(id).shape())));
        }
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}
