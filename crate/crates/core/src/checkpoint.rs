//! Checkpointing: a JSON manifest plus a little-endian binary blob.
//!
//! The manifest records the format version, config, vocabulary, epoch
//! counter, and per-parameter byte offsets; the blob holds parameter
//! values and both optimizer moments back to back. Loading rebuilds a
//! bit-identical model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{parameter_specs, Dims, Model};
use crate::optim::{OptimizerState, ParameterStore};
use crate::parse::Vocabulary;
use crate::tensor::{Real, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offsets into the blob.
    offset: u64,
    m_offset: u64,
    v_offset: u64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    config: Config,
    words: Vec<String>,
    pos_tags: Vec<String>,
    dep_labels: Vec<String>,
    epoch: usize,
    /// Blob file name, relative to the manifest.
    blob: String,
    params: Vec<ParamEntry>,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) => dir.join(blob),
        None => PathBuf::from(blob),
    }
}

fn write_slice<F: Real>(out: &mut Vec<u8>, data: &[F]) -> u64 {
    let offset = out.len() as u64;
    for v in data {
        v.write_le(out);
    }
    offset
}

/// Saves `<path>` (manifest JSON) and `<path>.bin` (blob) side by side.
pub fn save<F: Real>(path: &Path, model: &Model<F>, config: &Config, epoch: usize) -> Result<()> {
    let blob_name = format!(
        "{}.bin",
        path.file_name()
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string_lossy()
    );
    let mut blob = Vec::with_capacity(model.store.scalar_count() * 3 * F::BYTE_WIDTH);
    let mut params = Vec::with_capacity(model.store.len());
    for (name, tensor) in model.store.iter() {
        let state = model.store.optimizer_state(name).expect("state exists per parameter");
        let offset = write_slice(&mut blob, tensor.data());
        let m_offset = write_slice(&mut blob, state.first_moment());
        let v_offset = write_slice(&mut blob, state.second_moment());
        params.push(ParamEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            m_offset,
            v_offset,
            step: state.step_count(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: F::DTYPE.to_string(),
        config: config.clone(),
        words: model.vocab.words().to_vec(),
        pos_tags: model.vocab.pos_tags().to_vec(),
        dep_labels: model.vocab.dep_labels().to_vec(),
        epoch,
        blob: blob_name.clone(),
        params,
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(blob_path(path, &blob_name), blob)?;
    Ok(())
}

fn read_slice<F: Real>(blob: &[u8], offset: u64, len: usize, name: &str) -> Result<Vec<F>> {
    let start = offset as usize;
    let end = start + len * F::BYTE_WIDTH;
    if end > blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob truncated: parameter `{name}` needs bytes {start}..{end}, blob has {}",
            blob.len()
        )));
    }
    Ok(blob[start..end].chunks_exact(F::BYTE_WIDTH).map(F::read_le).collect())
}

/// Element type stored in a checkpoint, for dispatch before loading.
pub fn stored_dtype(path: &Path) -> Result<String> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(manifest.dtype)
}

/// Loads a checkpoint saved by [`save`]; every parameter named by the
/// model's spec must be present with the right shape.
pub fn load<F: Real>(path: &Path) -> Result<(Model<F>, Config, usize)> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {}, requested {}",
            manifest.dtype,
            F::DTYPE
        )));
    }
    manifest.config.validate()?;
    let vocab = Vocabulary::from_lists(manifest.words, manifest.pos_tags, manifest.dep_labels);
    let dims = Dims::from_config(&manifest.config);
    let blob = std::fs::read(blob_path(path, &manifest.blob))?;

    let mut store = ParameterStore::new();
    for (name, spec) in parameter_specs(&dims, &vocab) {
        let entry = manifest
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("manifest is missing parameter `{name}`")))?;
        let shape = spec.shape();
        if entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        let data = read_slice::<F>(&blob, entry.offset, len, &name)?;
        let m = read_slice::<F>(&blob, entry.m_offset, len, &name)?;
        let v = read_slice::<F>(&blob, entry.v_offset, len, &name)?;
        let tensor = Tensor::new(shape, data)?;
        store.insert_with_state(&name, tensor, OptimizerState::from_parts(m, v, entry.step))?;
    }
    if manifest.params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, model defines {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let tau = manifest.config.tau;
    Ok((Model::from_parts(dims, vocab, store, tau), manifest.config, manifest.epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_dataset;
    use crate::train::{build_vocab, evaluate_top1, prepare_dataset, train_epoch};

    fn trained_model() -> (Model<f64>, Config, Vec<crate::train::PreparedExample<f64>>) {
        let mut config = Config::default();
        config.d_x = 16;
        config.d_h = 8;
        config.embed_word = 8;
        config.embed_pos = 4;
        config.embed_dep = 4;
        config.attn_hidden = 4;
        config.min_count = 1;
        config.seed = 17;
        let examples = gen_dataset(config.seed, 8, &config).unwrap();
        let prepared = prepare_dataset::<f64>(&examples, &config).unwrap();
        let vocab = build_vocab(&prepared, config.min_count);
        let mut model = Model::new(&config, vocab).unwrap();
        train_epoch(&mut model, &prepared, &config, 0).unwrap();
        (model, config, prepared)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (model, config, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("model.ckpt");
        save(&first, &model, &config, 3).unwrap();
        let (loaded, loaded_config, epoch) = load::<f64>(&first).unwrap();
        assert_eq!(epoch, 3);
        assert_eq!(loaded_config, config);
        let second = dir.path().join("again.ckpt");
        save(&second, &loaded, &loaded_config, epoch).unwrap();
        assert_eq!(
            std::fs::read(first.with_file_name("model.ckpt.bin")).unwrap(),
            std::fs::read(second.with_file_name("again.ckpt.bin")).unwrap()
        );
        // Parameters and optimizer state are bit-identical.
        for (name, tensor) in model.store.iter() {
            assert_eq!(tensor.data(), loaded.store.get(name).unwrap().data(), "{name}");
            assert_eq!(
                model.store.optimizer_state(name).unwrap(),
                loaded.store.optimizer_state(name).unwrap()
            );
        }
    }

    #[test]
    fn evaluation_is_identical_after_reload() {
        let (model, config, prepared) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, &config, 1).unwrap();
        let before = evaluate_top1(&model, &prepared).unwrap();
        let (loaded, _, _) = load::<f64>(&path).unwrap();
        let after = evaluate_top1(&loaded, &prepared).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn missing_parameter_is_named() {
        let (model, config, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, &config, 0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
        let params = manifest["params"].as_array_mut().unwrap();
        params.retain(|p| p["name"] != "assembler.w");
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("assembler.w"), "{err}");
    }

    #[test]
    fn version_and_dtype_mismatches_rejected() {
        let (model, config, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, &config, 0).unwrap();
        assert_eq!(stored_dtype(&path).unwrap(), "f64");
        assert!(load::<f32>(&path).is_err());

        let text = std::fs::read_to_string(&path).unwrap();
        let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
        manifest["format_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_blob_rejected() {
        let (model, config, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, &config, 0).unwrap();
        let blob = path.with_file_name("model.ckpt.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
        let err = load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
