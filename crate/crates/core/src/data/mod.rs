//! Feature files, dataset manifests, temporal downsampling, batching and
//! the synthetic planted-segment benchmark.

mod batch;
mod featfile;
mod manifest;
mod synth;

pub use batch::{batch_iter, split_train_val, BatchIter};
pub use featfile::{
    decode_features, encode_features, read_features, write_features, FEATURE_HEADER_LEN,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{load_manifest, write_manifest, ManifestEntry, SampleRecord};
pub use synth::{nearest_centroid_baseline, synth_generate, write_dataset, SynthConfig};

use crate::tensor::Tensor;

/// Indices `round(k·(T'-1)/(T-1))` for `k = 0..T`; the identity when the
/// sequence already has at most `target` rows.
pub fn downsample_indices(len: usize, target: usize) -> Vec<usize> {
    if len <= target {
        return (0..len).collect();
    }
    if target == 1 {
        return vec![0];
    }
    (0..target)
        .map(|k| ((k * (len - 1)) as f64 / (target - 1) as f64).round() as usize)
        .collect()
}

pub fn downsample_uniform(seq: &Tensor<f32>, target: usize) -> Tensor<f32> {
    assert!(target >= 1, "downsample target must be positive");
    let idx = downsample_indices(seq.rows(), target);
    if idx.len() == seq.rows() {
        return seq.clone();
    }
    let rows: Vec<Vec<f32>> = idx.iter().map(|&i| seq.row_slice(i).to_vec()).collect();
    Tensor::from_rows(&rows).expect("non-empty rows")
}
