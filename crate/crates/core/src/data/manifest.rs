//! Line-delimited JSON dataset manifests. Feature paths are relative to the
//! manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_features;
use crate::error::{HlgtError, Result};
use crate::head::GroundTruth;
use crate::tensor::Tensor;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub video: PathBuf,
    pub query: PathBuf,
    /// Segment start in seconds.
    pub start: f64,
    /// Segment end in seconds.
    pub end: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub video: Tensor<f32>,
    pub query: Tensor<f32>,
    pub tokens: Option<Vec<String>>,
    pub gt: GroundTruth,
}

impl SampleRecord {
    pub fn duration(&self) -> f64 {
        self.gt.duration
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| HlgtError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, message: String| HlgtError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if !(entry.start < entry.end) {
            return Err(err(
                line,
                format!(
                    "sample `{}`: start {} must be before end {}",
                    entry.id, entry.start, entry.end
                ),
            ));
        }
        let gt = GroundTruth::from_seconds(entry.start, entry.end, entry.duration)
            .map_err(|e| err(line, format!("sample `{}`: {e}", entry.id)))?;
        let load = |rel: &Path| -> Result<Tensor<f32>> {
            let p = base.join(rel);
            if !p.is_file() {
                return Err(HlgtError::MissingFeatures {
                    id: entry.id.clone(),
                    path: p,
                });
            }
            read_features(&p)
        };
        let video = load(&entry.video)?;
        let query = load(&entry.query)?;
        out.push(SampleRecord {
            id: entry.id,
            video,
            query,
            tokens: entry.tokens,
            gt,
        });
    }
    if out.is_empty() {
        return Err(err(0, "manifest has no records".into()));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| HlgtError::io(path, e))?;
    f.write_all(&buf).map_err(|e| HlgtError::io(path, e))
}
