//! Adapter checkpoints: a JSON manifest plus a sibling `.bin` blob of
//! little-endian `f64` values, `A` then `B` for each tensor entry in
//! manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adapter::{AdapterSet, LoraAdapter};
use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub tag: String,
    pub a_shape: [usize; 2],
    pub b_shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: ModelConfig,
    pub rank: usize,
    pub alpha: f64,
    /// Seed of the run that produced the adapters, when known.
    pub seed: Option<u64>,
    /// Free-form origin, e.g. `warmup m=2000`.
    pub provenance: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub adapters: AdapterSet,
}

pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn save_adapters(
    set: &AdapterSet,
    config: &ModelConfig,
    seed: Option<u64>,
    provenance: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    set.validate(config)?;
    let tensors = set
        .adapters
        .iter()
        .map(|(tag, ad)| TensorEntry {
            tag: tag.clone(),
            a_shape: [ad.a.rows(), ad.a.cols()],
            b_shape: [ad.b.rows(), ad.b.cols()],
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        rank: config.rank,
        alpha: config.alpha,
        seed,
        provenance: provenance.to_string(),
        tensors,
    };
    let mut blob = Vec::with_capacity(set.param_count() * 8);
    for t in set.tensors() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bin = blob_path(path);
    std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    Ok(())
}

pub fn load_adapters(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest is not JSON: {e}")))?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("manifest has no version".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version { found: version as u32, expected: CHECKPOINT_VERSION });
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;
    let bin = blob_path(path);
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    decode(manifest, &blob)
}

fn decode(manifest: Manifest, blob: &[u8]) -> Result<Checkpoint> {
    let r = manifest.rank;
    if r != manifest.config.rank {
        return Err(Error::Format(format!("manifest rank {r} differs from config rank {}", manifest.config.rank)));
    }
    let mut need = 0;
    for e in &manifest.tensors {
        if e.a_shape[1] != r || e.b_shape[0] != r {
            return Err(Error::Format(format!(
                "{}: factor shapes {:?} / {:?} disagree with manifest rank {r}",
                e.tag, e.a_shape, e.b_shape
            )));
        }
        need += e.a_shape[0] * r + r * e.b_shape[1];
    }
    if blob.len() != need * 8 {
        return Err(Error::Format(format!(
            "blob holds {} bytes, manifest describes {}",
            blob.len(),
            need * 8
        )));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |shape: [usize; 2]| {
        let data: Vec<f64> = values.by_ref().take(shape[0] * shape[1]).collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| Error::Format(e.to_string()))
    };
    let mut set = AdapterSet::default();
    for e in &manifest.tensors {
        let a = take(e.a_shape)?;
        let b = take(e.b_shape)?;
        if set.adapters.insert(e.tag.clone(), LoraAdapter::new(a, b, manifest.alpha)?).is_some() {
            return Err(Error::Format(format!("duplicate tag {}", e.tag)));
        }
    }
    set.validate(&manifest.config).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Checkpoint { manifest, adapters: set })
}
