//! Synthetic planted-segment benchmark. Every sample draws a concept code
//! from a fixed bank; frames inside the planted segment are
//! `signal_strength·code + noise`, background frames are pure noise, and
//! every word is `code + noise`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_features, write_manifest, ManifestEntry, SampleRecord};
use crate::error::{HlgtError, Result};
use crate::head::{GroundTruth, Interval};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub samples: usize,
    /// Frames per video (one frame per second).
    pub frames: usize,
    pub words: usize,
    pub dim: usize,
    /// Phrase count the generator reports; words are split evenly.
    pub phrases: usize,
    pub noise_std: f64,
    pub signal_strength: f64,
    /// Segment length bounds as fractions of `frames`.
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Size of the concept bank.
    pub concepts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            samples: 250,
            frames: 64,
            words: 8,
            dim: 32,
            phrases: 3,
            noise_std: 0.5,
            signal_strength: 2.0,
            min_fraction: 0.2,
            max_fraction: 0.5,
            concepts: 8,
        }
    }
}

impl SynthConfig {
    /// Inclusive segment length range in frames.
    pub fn length_range(&self) -> Result<(usize, usize)> {
        let lo = ((self.min_fraction * self.frames as f64).ceil() as usize).max(1);
        let hi = ((self.max_fraction * self.frames as f64).floor() as usize).min(self.frames);
        if lo > hi {
            return Err(HlgtError::Config(format!(
                "segment range [{}, {}] admits no length in {} frames",
                self.min_fraction, self.max_fraction, self.frames
            )));
        }
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HlgtError::Config(format!("synth: {m}")));
        if self.samples == 0
            || self.frames == 0
            || self.words == 0
            || self.dim == 0
            || self.concepts == 0
        {
            return bad("samples, frames, words, dim and concepts must be positive");
        }
        if self.phrases == 0 || self.phrases > self.words {
            return bad("phrases must be between 1 and words");
        }
        if !(self.min_fraction > 0.0
            && self.min_fraction <= self.max_fraction
            && self.max_fraction <= 1.0)
        {
            return bad("segment fractions must satisfy 0 < min_fraction <= max_fraction <= 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite())
            || !self.signal_strength.is_finite()
        {
            return bad("noise_std must be finite and non-negative, signal_strength finite");
        }
        self.length_range().map(|_| ())
    }
}

fn noise(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("valid std").sample(rng)
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    let (lmin, lmax) = cfg.length_range()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bank: Vec<Vec<f64>> = (0..cfg.concepts)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let code = &bank[rng.random_range(0..cfg.concepts)];
        let len = rng.random_range(lmin..=lmax);
        let start = rng.random_range(0..=cfg.frames - len);
        let mut video = Vec::with_capacity(cfg.frames * cfg.dim);
        for t in 0..cfg.frames {
            let inside = t >= start && t < start + len;
            for &c in code {
                let mean = if inside { cfg.signal_strength * c } else { 0.0 };
                video.push((mean + noise(&mut rng, cfg.noise_std)) as f32);
            }
        }
        let mut query = Vec::with_capacity(cfg.words * cfg.dim);
        for _ in 0..cfg.words {
            for &c in code {
                query.push((c + noise(&mut rng, cfg.noise_std)) as f32);
            }
        }
        out.push(SampleRecord {
            id: format!("s{i:05}"),
            video: Tensor::new(cfg.frames, cfg.dim, video)?,
            query: Tensor::new(cfg.words, cfg.dim, query)?,
            tokens: None,
            gt: GroundTruth::from_seconds(start as f64, (start + len) as f64, cfg.frames as f64)?,
        });
    }
    Ok(out)
}

/// Writes `features/<id>_{video,query}.hlgt` and `manifest.jsonl` under
/// `dir`, returning the manifest path.
pub fn write_dataset(dir: &Path, records: &[SampleRecord]) -> Result<std::path::PathBuf> {
    let feat = dir.join("features");
    fs::create_dir_all(&feat).map_err(|e| HlgtError::io(&feat, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let video = Path::new("features").join(format!("{}_video.hlgt", r.id));
        let query = Path::new("features").join(format!("{}_query.hlgt", r.id));
        write_features(&r.video, &dir.join(&video))?;
        write_features(&r.query, &dir.join(&query))?;
        entries.push(ManifestEntry {
            id: r.id.clone(),
            video,
            query,
            start: r.gt.start_sec,
            end: r.gt.end_sec,
            duration: r.gt.duration,
            tokens: r.tokens.clone(),
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Learning-free localization: frames nearer to `signal_strength·q̄` (the
/// scaled query centroid) than to the origin are foreground; the prediction
/// spans the first to the last foreground frame.
pub fn nearest_centroid_baseline(sample: &SampleRecord, signal_strength: f64) -> Interval {
    let (n, d) = (sample.query.rows(), sample.query.cols());
    let mut centroid = vec![0.0f64; d];
    for r in 0..n {
        for (c, &x) in centroid.iter_mut().zip(sample.query.row_slice(r)) {
            *c += x as f64 / n as f64;
        }
    }
    let target: Vec<f64> = centroid.iter().map(|c| c * signal_strength).collect();
    let frames = sample.video.rows();
    let fg: Vec<usize> = (0..frames)
        .filter(|&t| {
            let f = sample.video.row_slice(t);
            let to_target: f64 = f
                .iter()
                .zip(&target)
                .map(|(&x, &c)| (x as f64 - c).powi(2))
                .sum();
            let to_origin: f64 = f.iter().map(|&x| (x as f64).powi(2)).sum();
            to_target < to_origin
        })
        .collect();
    match (fg.first(), fg.last()) {
        (Some(&a), Some(&b)) => Interval {
            start: a as f64 / frames as f64,
            end: (b + 1) as f64 / frames as f64,
        },
        _ => Interval {
            start: 0.0,
            end: 1.0,
        },
    }
}
