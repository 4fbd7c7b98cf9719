//! Checkpoint directories: binary weights, tokenizer, and a config manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LoraConfig, ModelConfig, ReferenceModel};
use super::tensor::Mat;
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFW1";

/// Architecture dims, adapter setup, scheme hash, and training provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

fn collect_tensors(model: &ReferenceModel) -> Vec<(String, Mat)> {
    let mut out = Vec::new();
    model
        .params
        .visit(|name, mat| out.push((name, mat.clone())));
    if let Some(lora) = &model.lora {
        lora.visit(|name, mat| out.push((name, mat.clone())));
    }
    out
}

pub fn save_checkpoint(
    dir: &Path,
    model: &ReferenceModel,
    tokenizer: &Tokenizer,
    manifest: &CheckpointManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::util::write_json_pretty(&dir.join("config.json"), manifest)?;
    crate::util::write_json_pretty(&dir.join("tokenizer.json"), tokenizer)?;

    let tensors = collect_tensors(model);
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("weights.bin"))?);
    out.write_all(MAGIC)?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, mat) in &tensors {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&(mat.rows as u32).to_le_bytes())?;
        out.write_all(&(mat.cols as u32).to_le_bytes())?;
        for v in &mat.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn load_tensors(path: &Path) -> Result<BTreeMap<String, Mat>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    if &read_exact::<4>(&mut file)? != MAGIC {
        return Err(Error::Checkpoint("bad magic in weights file".into()));
    }
    let count = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut file)?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        file.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("invalid tensor name".into()))?;
        let rows = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
        let cols = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
        let mut data = vec![0.0; rows * cols];
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(read_exact::<8>(&mut file)?);
        }
        tensors.insert(name, Mat { rows, cols, data });
    }
    Ok(tensors)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ReferenceModel, Tokenizer, CheckpointManifest)> {
    let manifest: CheckpointManifest = crate::util::read_json(&dir.join("config.json"))?;
    let mut tokenizer: Tokenizer = crate::util::read_json(&dir.join("tokenizer.json"))?;
    tokenizer.reindex();

    let mut model = ReferenceModel::new(manifest.model.clone())?;
    if let Some(lora_config) = manifest.lora.clone() {
        model = model.with_lora(lora_config, manifest.model.seed)?;
    }
    let tensors = load_tensors(&dir.join("weights.bin"))?;
    let mut missing = Vec::new();
    let mut fill = |name: String, mat: &mut Mat| match tensors.get(&name) {
        Some(stored) if stored.rows == mat.rows && stored.cols == mat.cols => {
            mat.data.copy_from_slice(&stored.data);
        }
        Some(_) => missing.push(format!("{name} (shape mismatch)")),
        None => missing.push(name),
    };
    model.params.visit_mut(&mut fill);
    if let Some(lora) = model.lora.as_mut() {
        lora.visit_mut(&mut fill);
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "missing tensors: {}",
            missing.join(", ")
        )));
    }
    Ok((model, tokenizer, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::author::TagScheme;
    use crate::backend::model::{LoraConfig, ModelConfig};
    use crate::backend::tokenizer::extend_tokenizer;

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let config = ModelConfig::causal_lm(2, 2, 16, 64, 32).with_seed(9);
        let model = ReferenceModel::new(config.clone()).unwrap();
        let base = Tokenizer::from_texts(["a few boys ran"], 50);
        let tokenizer = extend_tokenizer(&base, &TagScheme::default_scheme()).unwrap();
        let manifest = CheckpointManifest {
            model: config,
            lora: None,
            scheme_hash: Some("abc".into()),
            training: None,
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &tokenizer, &manifest).unwrap();
        let (loaded, tok, mf) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(tok, tokenizer);
        assert_eq!(mf.scheme_hash.as_deref(), Some("abc"));
    }

    #[test]
    fn checkpoint_round_trip_with_lora() {
        let config = ModelConfig::causal_lm(1, 2, 8, 32, 16).with_seed(3);
        let model = ReferenceModel::new(config.clone())
            .unwrap()
            .with_lora(LoraConfig::default(), 5)
            .unwrap();
        let tokenizer = Tokenizer::from_texts(["x y z"], 10);
        let manifest = CheckpointManifest {
            model: config,
            lora: Some(LoraConfig::default()),
            scheme_hash: None,
            training: None,
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &tokenizer, &manifest).unwrap();
        let (loaded, _, _) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, model);
    }
}
