//! Checkpoint directory: `header.json` (configuration echo, epoch,
//! validation metric, parameter manifest) and `params.hlgt` (every
//! parameter as consecutive feature-file records, in manifest order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::{decode_features, encode_features};
use crate::error::{HlgtError, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub epoch: Option<usize>,
    pub val_metric: Option<f64>,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    train: Option<&TrainConfig>,
    epoch: Option<usize>,
    val_metric: Option<f64>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HlgtError::io(dir, e))?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT,
        model: model.config.clone(),
        train: train.cloned(),
        epoch,
        val_metric,
        params: model
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let mut blob = Vec::new();
    for t in model.params.tensors() {
        blob.extend(encode_features(t));
    }
    let hp = dir.join("header.json");
    fs::write(&hp, serde_json::to_string_pretty(&header)? + "\n")
        .map_err(|e| HlgtError::io(&hp, e))?;
    let pp = dir.join("params.hlgt");
    fs::write(&pp, blob).map_err(|e| HlgtError::io(&pp, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointHeader)> {
    let hp = dir.join("header.json");
    let text = fs::read_to_string(&hp).map_err(|e| HlgtError::io(&hp, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text)
        .map_err(|e| HlgtError::Checkpoint(format!("{}: {e}", hp.display())))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(HlgtError::Checkpoint(format!(
            "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
            header.format
        )));
    }
    let mut model = Model::new(header.model.clone(), 0)?;
    if model.params.len() != header.params.len() {
        return Err(HlgtError::Checkpoint(format!(
            "header lists {} parameters, configuration builds {}",
            header.params.len(),
            model.params.len()
        )));
    }
    for (entry, (name, t)) in header.params.iter().zip(model.params.iter()) {
        if entry.name != name || entry.rows != t.rows() || entry.cols != t.cols() {
            return Err(HlgtError::Checkpoint(format!(
                "parameter `{}` ({}x{}) does not match `{name}` ({})",
                entry.name,
                entry.rows,
                entry.cols,
                t.shape()
            )));
        }
    }
    let pp = dir.join("params.hlgt");
    let blob = fs::read(&pp).map_err(|e| HlgtError::io(&pp, e))?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.params.len());
    for _ in &header.params {
        let (t, used) = decode_features(&blob[offset..], &pp)?;
        offset += used;
        tensors.push(t);
    }
    if offset != blob.len() {
        return Err(HlgtError::Checkpoint(format!(
            "{} trailing bytes in {}",
            blob.len() - offset,
            pp.display()
        )));
    }
    model.params.replace_all(tensors)?;
    Ok((model, header))
}
