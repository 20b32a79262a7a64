use hlgt::blocks::{AttentionParams, BlockLayout, FusionParams, PositionalEncoding, TrmParams};
use hlgt::tensor::{Tape, Tensor};
use proptest::prelude::*;

mod common;

use common::{attention as naive_mha, build, gelu, layer_norm as naive_layer_norm, mm, set};

fn eye(n: usize) -> Vec<f64> {
    Tensor::<f64>::identity(n).into_data()
}

fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    naive_mha(&q.to_vec(), &k.to_vec(), &v.to_vec(), 1)
}

fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.to_rows()
}

fn close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn attention_hand_case_with_identity_projections() {
    let (mha, mut s) = build(0, |pb| AttentionParams::new(pb, "mha", 2, 1));
    for id in [mha.wq, mha.wk, mha.wv, mha.wo] {
        set(&mut s, id, &eye(2));
    }
    let q = vec![vec![1.0, 0.0], vec![0.5, -1.0]];
    let k = vec![vec![1.0, 1.0], vec![0.0, 2.0], vec![-1.0, 0.5]];
    let v = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 4.0]];
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let qv = tape.constant(Tensor::from_rows(&q).unwrap()).unwrap();
    let kv = tape.constant(Tensor::from_rows(&k).unwrap()).unwrap();
    let vv = tape.constant(Tensor::from_rows(&v).unwrap()).unwrap();
    let out = mha.attend(&mut tape, &bind, qv, kv, vv, None).unwrap();
    assert!(close(
        &rows_of(tape.value(out)),
        &naive_attention(&q, &k, &v),
        1e-6
    ));
}

#[test]
fn single_key_and_identical_keys() {
    let (mha, s) = build(3, |pb| AttentionParams::new(pb, "mha", 4, 2));
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let q = tape
        .constant(
            Tensor::from_f64(
                3,
                4,
                &[0.1, 0.4, -2.0, 1.0, 3.0, 0.0, 0.2, -0.3, 1.0, 1.0, 1.0, 1.0],
            )
            .unwrap(),
        )
        .unwrap();
    let one = tape
        .constant(Tensor::from_f64(1, 4, &[0.5, -0.5, 0.25, 2.0]).unwrap())
        .unwrap();
    let out = mha.attend(&mut tape, &bind, q, one, one, None).unwrap();
    let v = tape.matmul(one, bind[mha.wv]).unwrap();
    let v = tape.matmul(v, bind[mha.wo]).unwrap();
    let expect = tape.value(v).row_slice(0).to_vec();
    for r in tape.value(out).to_rows() {
        assert!(r.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    let keys = tape
        .constant(Tensor::from_f64(3, 4, &[1.0, 2.0, 3.0, 4.0].repeat(3)).unwrap())
        .unwrap();
    let values = tape
        .constant(
            Tensor::from_f64(
                3,
                4,
                &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0],
            )
            .unwrap(),
        )
        .unwrap();
    let out = mha.attend(&mut tape, &bind, q, keys, values, None).unwrap();
    let mean = tape.mean_rows(values).unwrap();
    let mv = tape.matmul(mean, bind[mha.wv]).unwrap();
    let mv = tape.matmul(mv, bind[mha.wo]).unwrap();
    let expect = tape.value(mv).row_slice(0).to_vec();
    for r in tape.value(out).to_rows() {
        assert!(r.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn trm_two_tokens_match_hand_evaluation() {
    let (trm, mut s) = build(0, |pb| TrmParams::new(pb, "trm", 2, 1));
    let wq = [0.5, -0.3, 0.2, 0.8];
    let wk = [1.0, 0.4, -0.6, 0.3];
    let wv = [0.7, 0.1, -0.2, 0.9];
    let wo = [1.1, 0.0, 0.3, -0.5];
    set(&mut s, trm.attn.wq, &wq);
    set(&mut s, trm.attn.wk, &wk);
    set(&mut s, trm.attn.wv, &wv);
    set(&mut s, trm.attn.wo, &wo);
    let w1: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.7).sin() * 0.5).collect();
    let b1: Vec<f64> = (0..8).map(|i| 0.05 * i as f64 - 0.2).collect();
    let w2: Vec<f64> = (0..16)
        .map(|i| ((i as f64) * 1.3 + 0.4).cos() * 0.4)
        .collect();
    let b2 = [0.1, -0.1];
    set(&mut s, trm.ffn.l1.w, &w1);
    set(&mut s, trm.ffn.l1.b, &b1);
    set(&mut s, trm.ffn.l2.w, &w2);
    set(&mut s, trm.ffn.l2.b, &b2);
    let (g1, c1, g2, c2) = ([1.2, 0.8], [0.1, -0.2], [0.9, 1.1], [0.0, 0.3]);
    set(&mut s, trm.norm1.gain, &g1);
    set(&mut s, trm.norm1.bias, &c1);
    set(&mut s, trm.norm2.gain, &g2);
    set(&mut s, trm.norm2.bias, &c2);

    let x = vec![vec![1.0, -0.5], vec![0.3, 2.0]];
    let m = |d: &[f64], r: usize, c: usize| {
        (0..r)
            .map(|i| d[i * c..(i + 1) * c].to_vec())
            .collect::<Vec<_>>()
    };
    let q = mm(&x, &m(&wq, 2, 2));
    let k = mm(&x, &m(&wk, 2, 2));
    let v = mm(&x, &m(&wv, 2, 2));
    let a = mm(&naive_attention(&q, &k, &v), &m(&wo, 2, 2));
    let y: Vec<Vec<f64>> = x
        .iter()
        .zip(&a)
        .map(|(r, s)| r.iter().zip(s).map(|(p, q)| p + q).collect())
        .collect();
    let y = naive_layer_norm(&y, &g1, &c1);
    let h: Vec<Vec<f64>> = mm(&y, &m(&w1, 2, 8))
        .into_iter()
        .map(|r| r.iter().zip(&b1).map(|(p, b)| gelu(p + b)).collect())
        .collect();
    let f: Vec<Vec<f64>> = mm(&h, &m(&w2, 8, 2))
        .into_iter()
        .map(|r| r.iter().zip(&b2).map(|(p, b)| p + b).collect())
        .collect();
    let z: Vec<Vec<f64>> = y
        .iter()
        .zip(&f)
        .map(|(r, s)| r.iter().zip(s).map(|(p, q)| p + q).collect())
        .collect();
    let expect = naive_layer_norm(&z, &g2, &c2);

    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let xv = tape.constant(Tensor::from_rows(&x).unwrap()).unwrap();
    let out = trm.forward(&mut tape, &bind, xv, None).unwrap();
    assert!(
        close(&rows_of(tape.value(out)), &expect, 1e-6),
        "{:?} vs {expect:?}",
        tape.value(out)
    );
}

fn permutation() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..6).prop_flat_map(|l| {
        (
            prop::collection::vec(-2.0f64..2.0, l * 4),
            Just((0..l).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trm_is_permutation_equivariant((data, perm) in permutation(), seed in 0u64..1000) {
        let (trm, s) = build(seed, |pb| TrmParams::new(pb, "trm", 4, 2));
        let l = perm.len();
        let x = Tensor::new(l, 4, data).unwrap();
        let mut tape = Tape::<f64>::new();
        let bind = s.bind(&mut tape).unwrap();
        let xv = tape.constant(x).unwrap();
        let y = trm.forward(&mut tape, &bind, xv, None).unwrap();
        let px = tape.gather_rows(xv, &perm).unwrap();
        let py = trm.forward(&mut tape, &bind, px, None).unwrap();
        let expect = tape.gather_rows(y, &perm).unwrap();
        let diff = tape.value(py).data().iter().zip(tape.value(expect).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-5, "diff {diff}");
    }

    #[test]
    fn scalar_fusion_stays_in_convex_hull(tokens in prop::collection::vec(-10.0f64..10.0, 1..9), seed in 0u64..1000) {
        let (fusion, s) = build(seed, |pb| FusionParams::new(pb, "fusion", 1, 3));
        let n = tokens.len();
        let mut tape = Tape::<f64>::new();
        let bind = s.bind(&mut tape).unwrap();
        let z = tape.constant(Tensor::new(n, 1, tokens.clone()).unwrap()).unwrap();
        let (pooled, w) = fusion.pool(&mut tape, &bind, z, &BlockLayout::single(n)).unwrap();
        let v = tape.scalar(pooled);
        let lo = tokens.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tokens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        let total: f64 = tape.value(w).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn positional_encoding_is_bounded(dim in 1usize..40, t in 0usize..600) {
        let pe = PositionalEncoding::new(dim * 2, 600).unwrap();
        let row = pe.at(t).unwrap();
        prop_assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(row.len(), dim * 2);
    }
}
