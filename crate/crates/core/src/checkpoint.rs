//! Checkpoints: `manifest.json` plus one binary blob per tensor.
//!
//! Blob layout (little-endian): `u32` rank, `rank` x `u32` dims, then the
//! row-major `f32` values. Optimizer moments, when saved, live next to the
//! parameters under `adam_m/` and `adam_v/`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Model, ModelConfig};
use crate::nn::Adam;

pub const CHECKPOINT_FORMAT: &str = "ctf-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub iteration: u64,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerState>,
}

pub fn write_tensor(path: &Path, value: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + value.len() * 4);
    buf.extend_from_slice(&2u32.to_le_bytes());
    for d in [value.nrows(), value.ncols()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in value.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |k: usize| -> Result<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(path, "truncated header"))
    };
    let rank = word(0)? as usize;
    if rank != 2 {
        return Err(Error::format(path, format!("rank {rank}, expected 2")));
    }
    let (rows, cols) = (word(1)? as usize, word(2)? as usize);
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("{} payload bytes for a {rows}x{cols} tensor", body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).unwrap())
}

/// Saves model parameters (and optionally Adam state) into `dir`.
pub fn save(dir: &Path, model: &Model, seed: u64, iteration: u64, adam: Option<&Adam>) -> Result<()> {
    for sub in ["tensors", "adam_m", "adam_v"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut tensors = Vec::new();
    for id in model.store.ids() {
        let name = model.store.name(id).to_string();
        let file = format!("{name}.bin");
        let value = model.store.value(id);
        write_tensor(&dir.join("tensors").join(&file), value)?;
        if let Some(adam) = adam {
            write_tensor(&dir.join("adam_m").join(&file), &adam.m[id.0])?;
            write_tensor(&dir.join("adam_v").join(&file), &adam.v[id.0])?;
        }
        tensors.push(TensorEntry {
            name,
            shape: vec![value.nrows(), value.ncols()],
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        model: model.config,
        seed,
        iteration,
        tensors,
        optimizer: adam.map(|a| OptimizerState {
            step: a.step,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Schema(format!(
            "checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

pub struct Loaded {
    pub model: Model,
    pub manifest: CheckpointManifest,
    pub adam: Option<Adam>,
}

/// Restores a checkpoint. Tensor names and shapes must match the model the
/// manifest describes.
pub fn load(dir: &Path) -> Result<Loaded> {
    let manifest = read_manifest(dir)?;
    let mut model = Model::new(manifest.model, manifest.seed)?;
    let read_all = |sub: &str| -> Result<Vec<(String, Array2<f64>)>> {
        manifest
            .tensors
            .iter()
            .map(|t| {
                let v = read_tensor(&dir.join(sub).join(&t.file))?;
                if [v.nrows(), v.ncols()] != t.shape[..] {
                    return Err(Error::Schema(format!("{}: shape mismatch with manifest", t.name)));
                }
                Ok((t.name.clone(), v))
            })
            .collect()
    };
    model.store.load(read_all("tensors")?)?;
    let adam = match &manifest.optimizer {
        Some(state) => {
            let mut adam = Adam::new(&model.store);
            adam.step = state.step;
            adam.beta1 = state.beta1;
            adam.beta2 = state.beta2;
            adam.eps = state.eps;
            adam.m = read_all("adam_m")?.into_iter().map(|(_, v)| v).collect();
            adam.v = read_all("adam_v")?.into_iter().map(|(_, v)| v).collect();
            Some(adam)
        }
        None => None,
    };
    Ok(Loaded { model, manifest, adam })
}

/// Like [`load`], additionally requiring a specific model configuration.
pub fn load_expecting(dir: &Path, expected: &ModelConfig) -> Result<Loaded> {
    let manifest = read_manifest(dir)?;
    if &manifest.model != expected {
        return Err(Error::Schema(format!(
            "checkpoint was trained with {:?}, expected {:?}",
            manifest.model, expected
        )));
    }
    load(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::PointBudget;

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::tiny(PointBudget::MINI), 4).unwrap();
        let mut adam = Adam::new(&model.store);
        adam.step = 7;
        save(dir.path(), &model, 4, 12, Some(&adam)).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.manifest.iteration, 12);
        assert_eq!(loaded.adam.unwrap().step, 7);
        for id in model.store.ids() {
            let a = model.store.value(id);
            let b = loaded.model.store.value(id);
            assert!(a.iter().zip(b).all(|(x, y)| (*x as f32) as f64 == *y));
        }
    }

    #[test]
    fn tensor_layout_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_tensor(&path, &Array2::from_elem((2, 3), 1.5)).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..12], &[2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 24);
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(read_tensor(&path).is_err());

        let model = Model::new(ModelConfig::tiny(PointBudget::MINI), 0).unwrap();
        save(dir.path(), &model, 0, 0, None).unwrap();
        let other = ModelConfig {
            width_divisor: 8,
            budget: PointBudget::MINI,
        };
        assert!(matches!(load_expecting(dir.path(), &other), Err(Error::Schema(_))));
    }
}
