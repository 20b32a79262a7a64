//! Plain-loop reference implementations used as oracles.
#![allow(dead_code)]

use hlgt::blocks::{FusionParams, ParamBuilder, TrmParams};
use hlgt::params::{Initializer, ParamId, ParamStore};
use hlgt::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn build<T>(seed: u64, f: impl FnOnce(&mut ParamBuilder) -> T) -> (T, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let out = f(&mut ParamBuilder::new(&mut store, &mut init));
    (out, store.cast())
}

pub fn set(store: &mut ParamStore<f64>, id: ParamId, data: &[f64]) {
    let t = store.get_mut(id);
    assert_eq!(t.data().len(), data.len());
    t.data_mut().copy_from_slice(data);
}

/// Adds a deterministic wiggle to every parameter so zero biases and unit
/// gains take generic values.
pub fn wiggle(store: &mut ParamStore<f64>) {
    for (n, t) in store.tensors_mut().iter_mut().enumerate() {
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x += 0.1 * ((n * 31 + i) as f64 * 0.618).sin();
        }
    }
}

pub fn mat(store: &ParamStore<f64>, id: ParamId) -> Mat {
    store.get(id).to_rows()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            (0..b[0].len())
                .map(|j| r.iter().zip(b).map(|(x, row)| x * row[j]).sum())
                .collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Multi-head attention on already-projected rows.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Mat {
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qr) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kr| cols.clone().map(|c| qr[c] * kr[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&logits);
            for c in cols.clone() {
                out[i][c] = w.iter().zip(v).map(|(p, vr)| p * vr[c]).sum();
            }
        }
    }
    out
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

/// Post-norm transformer block; `context` gives keys and values.
pub fn trm(s: &ParamStore<f64>, p: &TrmParams, x: &Mat, context: &Mat) -> Mat {
    let a = &p.attn;
    let q = mm(x, &mat(s, a.wq));
    let k = mm(context, &mat(s, a.wk));
    let v = mm(context, &mat(s, a.wv));
    let att = mm(&attention(&q, &k, &v, a.heads), &mat(s, a.wo));
    let row = |id| s.get(id).data().to_vec();
    let y = layer_norm(&add(x, &att), &row(p.norm1.gain), &row(p.norm1.bias));
    let h: Mat = add_row(&mm(&y, &mat(s, p.ffn.l1.w)), &row(p.ffn.l1.b))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let f = add_row(&mm(&h, &mat(s, p.ffn.l2.w)), &row(p.ffn.l2.b));
    layer_norm(&add(&y, &f), &row(p.norm2.gain), &row(p.norm2.bias))
}

/// Fusion weights and pooled row.
pub fn fusion(s: &ParamStore<f64>, p: &FusionParams, x: &Mat) -> (Vec<f64>, Vec<f64>) {
    let row = |id| s.get(id).data().to_vec();
    let h: Mat = add_row(&mm(x, &mat(s, p.w5.w)), &row(p.w5.b))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let logits: Vec<f64> = add_row(&mm(&h, &mat(s, p.w4.w)), &row(p.w4.b))
        .into_iter()
        .map(|r| r[0])
        .collect();
    let w = softmax(&logits);
    let pooled = (0..x[0].len())
        .map(|c| w.iter().zip(x).map(|(a, r)| a * r[c]).sum())
        .collect();
    (w, pooled)
}

pub fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.len(), a[0].len()), (b.len(), b[0].len()));
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
