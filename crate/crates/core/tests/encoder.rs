use hlgt::blocks::{PositionalEncoding, TrmParams};
use hlgt::encoder::{
    assemble_features, encode_global, encode_local, global_local_transform, split_clips,
    ModalityEncoder, PhraseConv,
};
use hlgt::params::ParamStore;
use hlgt::tensor::{Tape, Tensor};
use proptest::prelude::*;

mod common;

use common::{add, build, fusion, max_diff, mm, set, tensor, trm, wiggle, Mat};

const D: usize = 4;

fn encoder(seed: u64) -> (ModalityEncoder, ParamStore<f64>) {
    let (enc, mut s) = build(seed, |pb| ModalityEncoder::new(pb, "enc", D, 2, 6));
    wiggle(&mut s);
    (enc, s)
}

fn frames(n: usize, phase: f64) -> Mat {
    (0..n)
        .map(|t| {
            (0..D)
                .map(|j| ((t * D + j) as f64 * 0.9 + phase).sin())
                .collect()
        })
        .collect()
}

#[test]
fn phrase_conv_picks_the_strongest_window() {
    let (conv, mut s) = build(0, |pb| PhraseConv::new(pb, "conv", 1));
    for ws in &conv.kernels {
        for &w in ws {
            set(&mut s, w, &[1.0]);
        }
    }
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let words = tape
        .constant(Tensor::from_f64(4, 1, &[1.0, -1.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let out = conv.forward(&mut tape, &bind, words).unwrap();
    let got = tape.value(out).data().to_vec();
    let t1 = 1f64.tanh();
    let expect = [t1, -t1, 0.0, 0.0];
    for (g, e) in got.iter().zip(expect) {
        assert!((g - e).abs() < 1e-12, "{got:?}");
    }
}

#[test]
fn local_encoding_matches_reference_per_clip() {
    let (enc, s) = encoder(1);
    let x = frames(5, 0.3);
    let clips = split_clips(5, 2, 0).unwrap();
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let xv = tape.constant(tensor(&x)).unwrap();
    let out = encode_local(&mut tape, &bind, &enc, xv, &clips.layout()).unwrap();
    let expect: Mat = clips
        .spans
        .iter()
        .map(|sp| {
            let block = x[sp.start..sp.end].to_vec();
            let h = trm(&s, &enc.temporal, &block, &block);
            fusion(&s, &enc.fusion, &h).1
        })
        .collect();
    assert_eq!(clips.spans.last().unwrap().len(), 1);
    assert!(max_diff(&tape.value(out).to_rows(), &expect) < 1e-9);
}

#[test]
fn identical_clips_encode_identically() {
    let (enc, s) = encoder(2);
    let clip = frames(3, 1.0);
    let x: Mat = clip.iter().chain(&clip).chain(&clip).cloned().collect();
    let clips = split_clips(9, 3, 0).unwrap();
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let xv = tape.constant(tensor(&x)).unwrap();
    let out = encode_local(&mut tape, &bind, &enc, xv, &clips.layout()).unwrap();
    let rows = tape.value(out).to_rows();
    assert_eq!(rows.len(), 3);
    assert!(max_diff(&rows[0..1].to_vec(), &rows[1..2].to_vec()) < 1e-12);
    assert!(max_diff(&rows[0..1].to_vec(), &rows[2..3].to_vec()) < 1e-12);
}

#[test]
fn global_encoding_matches_reference() {
    let (enc, s) = encoder(3);
    let x = frames(6, -0.4);
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let xv = tape.constant(tensor(&x)).unwrap();
    let out = encode_global(&mut tape, &bind, &enc, xv).unwrap();
    let h = trm(&s, &enc.temporal, &x, &x);
    let expect = vec![fusion(&s, &enc.fusion, &h).1];
    assert!(max_diff(&tape.value(out).to_rows(), &expect) < 1e-9);
}

#[test]
fn global_local_stage_and_assembly_match_reference() {
    let (enc, s) = encoder(4);
    let locals = frames(3, 2.0);
    let seed = frames(1, -1.0);
    let pe = PositionalEncoding::new(D, 16).unwrap();
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let lv = tape.constant(tensor(&locals)).unwrap();
    let sv = tape.constant(tensor(&seed)).unwrap();
    let lg = global_local_transform(&mut tape, &bind, &enc, lv, sv, Some(&pe)).unwrap();
    let out = assemble_features(&mut tape, &bind, &enc, &lg, lv).unwrap();

    let table: Mat = (0..3).map(|t| pe.at(t).unwrap().to_vec()).collect();
    let tokens = trm(
        &s,
        &enc.local_trm,
        &add(&locals, &table),
        &add(&locals, &table),
    );
    let mean: Vec<f64> = (0..D)
        .map(|j| tokens.iter().map(|r| r[j]).sum::<f64>() / 3.0)
        .collect();
    let global = trm(&s, &enc.global_trm, &seed, &tokens);
    assert!(max_diff(&tape.value(lg.local_tokens).to_rows(), &tokens) < 1e-9);
    assert!(max_diff(&tape.value(lg.local_summary).to_rows(), &vec![mean.clone()]) < 1e-9);
    assert!(max_diff(&tape.value(lg.global_summary).to_rows(), &global) < 1e-9);

    let joined: Mat = tokens
        .iter()
        .map(|r| r.iter().chain(&global[0]).copied().collect())
        .collect();
    let bias = s.get(enc.assemble.b).data().to_vec();
    let assembled: Mat = mm(&joined, &s.get(enc.assemble.w).to_rows())
        .into_iter()
        .map(|r| r.iter().zip(&bias).map(|(a, b)| a + b).collect())
        .collect();
    assert!(max_diff(&tape.value(out.tokens).to_rows(), &assembled) < 1e-9);
    let pooled: Vec<f64> = mean.iter().chain(&global[0]).copied().collect();
    assert!(max_diff(&tape.value(out.pooled).to_rows(), &vec![pooled]) < 1e-9);
}

#[test]
fn zero_assembly_projection_gives_zero_tokens() {
    let (enc, mut s) = encoder(5);
    set(&mut s, enc.assemble.w, &vec![0.0; 2 * D * D]);
    set(&mut s, enc.assemble.b, &[0.0; D]);
    let mut tape = Tape::<f64>::new();
    let bind = s.bind(&mut tape).unwrap();
    let lv = tape.constant(tensor(&frames(2, 0.0))).unwrap();
    let sv = tape.constant(tensor(&frames(1, 0.5))).unwrap();
    let lg = global_local_transform(&mut tape, &bind, &enc, lv, sv, None).unwrap();
    let out = assemble_features(&mut tape, &bind, &enc, &lg, lv).unwrap();
    assert_eq!(tape.shape(out.tokens).dims(), vec![2, D]);
    assert!(tape.value(out.tokens).data().iter().all(|&v| v == 0.0));
}

#[test]
fn temporal_block_is_shared_between_branches() {
    let (_, s) = encoder(6);
    let names: Vec<&str> = s
        .iter()
        .map(|(n, _)| n)
        .filter(|n| n.contains("temporal"))
        .collect();
    let trm_params = build(0, |pb| TrmParams::new(pb, "t", D, 2)).1.len();
    assert_eq!(names.len(), trm_params);
}

fn shuffled(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n * D),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn summaries_ignore_local_order_without_positions((data, perm) in shuffled(2..6), seed in 0u64..500) {
        let (enc, s) = encoder(seed);
        let n = perm.len();
        let mut tape = Tape::<f64>::new();
        let bind = s.bind(&mut tape).unwrap();
        let lv = tape.constant(Tensor::new(n, D, data).unwrap()).unwrap();
        let pv = tape.gather_rows(lv, &perm).unwrap();
        let sv = tape.constant(tensor(&frames(1, 0.2))).unwrap();
        let a = global_local_transform(&mut tape, &bind, &enc, lv, sv, None).unwrap();
        let b = global_local_transform(&mut tape, &bind, &enc, pv, sv, None).unwrap();
        let rows = |v| tape.value(v).to_rows();
        prop_assert!(max_diff(&rows(a.local_summary), &rows(b.local_summary)) < 1e-9);
        prop_assert!(max_diff(&rows(a.global_summary), &rows(b.global_summary)) < 1e-9);
        let permuted: Mat = perm.iter().map(|&i| rows(a.local_tokens)[i].clone()).collect();
        prop_assert!(max_diff(&permuted, &rows(b.local_tokens)) < 1e-9);
    }

    #[test]
    fn global_encoding_ignores_frame_order((data, perm) in shuffled(1..7), seed in 0u64..500) {
        let (enc, s) = encoder(seed);
        let n = perm.len();
        let mut tape = Tape::<f64>::new();
        let bind = s.bind(&mut tape).unwrap();
        let xv = tape.constant(Tensor::new(n, D, data).unwrap()).unwrap();
        let pv = tape.gather_rows(xv, &perm).unwrap();
        let a = encode_global(&mut tape, &bind, &enc, xv).unwrap();
        let b = encode_global(&mut tape, &bind, &enc, pv).unwrap();
        prop_assert!(max_diff(&tape.value(a).to_rows(), &tape.value(b).to_rows()) < 1e-9);
    }
}
