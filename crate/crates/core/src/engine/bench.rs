//! Throughput measurements: forward-only, full train steps, and the decoder
//! cross-attention evaluated fused versus branch by branch.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_step, Adam, TrainConfig};
use crate::data::SampleRecord;
use crate::decoder::{parallel_cross_attention, BranchMode};
use crate::error::{HlgtError, Result};
use crate::model::Model;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Timed passes; the fastest one is reported.
    pub repeats: usize,
    /// Decoder calls per timed pass.
    pub decoder_calls: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repeats: 5,
            decoder_calls: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repeats: usize,
    pub threads: usize,
    pub forward_samples_per_second: f64,
    pub train_step_samples_per_second: f64,
    pub decoder_parallel_calls_per_second: f64,
    pub decoder_sequential_calls_per_second: f64,
    /// Largest absolute difference between the two decoder modes' outputs.
    pub decoder_max_abs_diff: f64,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let rows = [
            ("forward", self.forward_samples_per_second, "samples/s"),
            (
                "train step",
                self.train_step_samples_per_second,
                "samples/s",
            ),
            (
                "decoder parallel",
                self.decoder_parallel_calls_per_second,
                "calls/s",
            ),
            (
                "decoder sequential",
                self.decoder_sequential_calls_per_second,
                "calls/s",
            ),
        ];
        let mut s = format!(
            "samples={} repeats={} threads={}\n",
            self.samples, self.repeats, self.threads
        );
        for (name, v, unit) in rows {
            s.push_str(&format!("{name:<20}{v:>12.1} {unit}\n"));
        }
        s.push_str(&format!(
            "{:<20}{:>12.3e}\n",
            "decoder max |diff|", self.decoder_max_abs_diff
        ));
        s
    }
}

fn fastest(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best.max(1e-12))
}

/// Measures `model` on `data`. The model's parameters are left untouched:
/// train steps run on a clone.
pub fn bench(
    model: &Model,
    train_cfg: &TrainConfig,
    data: &[SampleRecord],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if data.is_empty() {
        return Err(HlgtError::Empty("benchmark samples"));
    }
    if cfg.repeats == 0 || cfg.decoder_calls == 0 {
        return Err(HlgtError::InvalidArgument(
            "repeats and decoder_calls must be positive".into(),
        ));
    }
    let n = data.len() as f64;
    let forward = fastest(cfg.repeats, || {
        for s in data {
            model.predict_sample(s)?;
        }
        Ok(())
    })?;

    let mut scratch = model.clone();
    let mut adam = Adam::new(train_cfg.adam(), scratch.params.tensors());
    let step = fastest(cfg.repeats, || {
        for s in data {
            train_step(
                &mut scratch,
                &mut adam,
                &[s],
                train_cfg,
                train_cfg.learning_rate,
            )?;
        }
        Ok(())
    })?;

    let (par, seq, diff) = decoder_ab(model, data.len() as u64, cfg)?;
    Ok(BenchReport {
        samples: data.len(),
        repeats: cfg.repeats,
        threads: rayon::current_num_threads(),
        forward_samples_per_second: n / forward,
        train_step_samples_per_second: n / step,
        decoder_parallel_calls_per_second: cfg.decoder_calls as f64 / par,
        decoder_sequential_calls_per_second: cfg.decoder_calls as f64 / seq,
        decoder_max_abs_diff: diff,
    })
}

/// Forward and backward through the decoder cross-attention on random
/// modality tokens, in both branch modes. Returns the best seconds per pass
/// for each mode and the largest output difference between them.
fn decoder_ab(model: &Model, seed: u64, cfg: &BenchConfig) -> Result<(f64, f64, f64)> {
    let c = &model.config;
    let d = c.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = |rows: usize| {
        let data: Vec<f32> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(rows, d, data)
    };
    let video = random(c.max_frames.div_ceil(c.clip_len))?;
    let query = random(c.phrases)?;
    let dec = &model.net.decoder;
    let branch = |b: &crate::decoder::BranchParams| [b.wq, b.wk, b.wv, b.wo, b.alpha];
    let used: Vec<_> = std::iter::once(dec.segment_queries)
        .chain(branch(&dec.video))
        .chain(branch(&dec.query))
        .collect();

    let run = |mode: BranchMode| -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let filler = tape.constant(Tensor::zeros(1, 1))?;
        let mut vars = vec![filler; model.params.len()];
        for &id in &used {
            vars[id.index()] = tape.param(model.params.get(id).clone())?;
        }
        let bind = model.params.binding_from_vars(&vars)?;
        let sbar = bind[dec.segment_queries];
        let v = tape.constant(video.clone())?;
        let q = tape.constant(query.clone())?;
        let kv_v = (
            tape.matmul(v, bind[dec.video.wk])?,
            tape.matmul(v, bind[dec.video.wv])?,
        );
        let kv_q = (
            tape.matmul(q, bind[dec.query.wk])?,
            tape.matmul(q, bind[dec.query.wv])?,
        );
        let out = parallel_cross_attention(&mut tape, &bind, dec, sbar, kv_v, kv_q, mode)?;
        let value = tape.value(out).clone();
        let loss = tape.sum_all(out)?;
        tape.backward(loss)?;
        Ok(value)
    };
    let a = run(BranchMode::Parallel)?;
    let b = run(BranchMode::Sequential)?;
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max);

    let batch = |mode: BranchMode| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..cfg.decoder_calls {
            run(mode)?;
        }
        Ok(t.elapsed().as_secs_f64())
    };
    let (mut par, mut seq) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..cfg.repeats {
        seq = seq.min(batch(BranchMode::Sequential)?);
        par = par.min(batch(BranchMode::Parallel)?);
    }
    let (par, seq) = (par.max(1e-12), seq.max(1e-12));
    Ok((par, seq, diff))
}
