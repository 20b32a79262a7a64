//! Run configuration: named presets overridden by a TOML document.
//!
//! A config file may name a `preset`; its tables are merged key-by-key on
//! top of that preset and unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::engine::TrainConfig;
use crate::error::{HlgtError, Result};
use crate::model::ModelConfig;

pub const PRESETS: [&str; 4] = ["paper-anet", "paper-charades", "paper-tacos", "toy"];
pub const DEFAULT_PRESET: &str = "toy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A complete configuration for one of [`PRESETS`].
pub fn preset(name: &str) -> Result<Config> {
    let toy = Config {
        preset: name.to_string(),
        model: ModelConfig::default(),
        train: TrainConfig {
            batch_size: 4,
            early_stop_patience: 50,
            ..TrainConfig::default()
        },
        synth: SynthConfig::default(),
    };
    let full_scale = |lr: f64| {
        let mut c = toy.clone();
        c.model = ModelConfig {
            video_dim: 2048,
            query_dim: 300,
            dim: 1024,
            heads: 8,
            clip_len: 16,
            fusion_hidden: 1024,
            max_frames: 256,
            ..ModelConfig::default()
        };
        c.train = TrainConfig {
            learning_rate: lr,
            epochs: 80,
            batch_size: 16,
            grad_clip_norm: 1.0,
            ..TrainConfig::default()
        };
        c.synth = SynthConfig {
            frames: 256,
            words: 12,
            dim: 2048,
            ..SynthConfig::default()
        };
        c
    };
    match name {
        "toy" => Ok(toy),
        "paper-anet" | "paper-charades" => Ok(full_scale(3e-4)),
        "paper-tacos" => Ok(full_scale(2e-4)),
        other => Err(HlgtError::Config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `text` over its named preset, or over `fallback_preset`.
pub fn parse_config(text: &str, fallback_preset: Option<&str>) -> Result<Config> {
    let doc: toml::Table = toml::from_str(text).map_err(|e| HlgtError::Config(e.to_string()))?;
    let name = match doc.get("preset") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => return Err(HlgtError::Config("`preset` must be a string".into())),
        None => fallback_preset.unwrap_or(DEFAULT_PRESET).to_string(),
    };
    let base = preset(&name)?;
    let mut value = toml::Value::try_from(&base).map_err(|e| HlgtError::Config(e.to_string()))?;
    merge(&mut value, toml::Value::Table(doc));
    let cfg: Config = value
        .try_into()
        .map_err(|e: toml::de::Error| HlgtError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file, or the named preset when no file is given.
pub fn load_config(path: Option<&Path>, preset_name: Option<&str>) -> Result<Config> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HlgtError::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text, preset_name)
        }
        None => {
            let cfg = preset(preset_name.unwrap_or(DEFAULT_PRESET))?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}
