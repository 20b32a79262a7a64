//! Cross-modal decoder: learnable segment queries attend to video and query
//! tokens through two parallel branches, plus the cycle-consistency loss
//! between clips and phrases.

use serde::{Deserialize, Serialize};

use crate::blocks::{ParamBuilder, TrmParams};
use crate::error::{HlgtError, Result};
use crate::params::{Binding, ParamId};
use crate::tensor::{CrossBranch, Real, Tape, Tensor, Var};

/// Per-branch query and output projections of a cross-attention whose keys
/// and values come from [`project_modality_kv`].
#[derive(Debug, Clone, Copy)]
pub struct BranchParams {
    pub wq: ParamId,
    pub wo: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub alpha: ParamId,
}

impl BranchParams {
    fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scope(name, |pb| BranchParams {
            wq: pb.uniform("wq", dim, dim),
            wo: pb.uniform("wo", dim, dim),
            wk: pb.uniform("wk", dim, dim),
            wv: pb.uniform("wv", dim, dim),
            alpha: pb.constant("alpha", 1, 1, 0.5),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    /// `M×D` learnable segment queries.
    pub segment_queries: ParamId,
    pub self_attn: TrmParams,
    pub video: BranchParams,
    pub query: BranchParams,
    pub heads: usize,
}

impl DecoderParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize, slots: usize) -> Self {
        pb.scope(name, |pb| DecoderParams {
            segment_queries: pb.normal("segment_queries", slots, dim, 1.0 / (dim as f64).sqrt()),
            self_attn: TrmParams::new(pb, "self_attn", dim, heads),
            video: BranchParams::new(pb, "video", dim),
            query: BranchParams::new(pb, "query", dim),
            heads,
        })
    }
}

/// How the two cross-attention branches are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    /// Fused two-branch node; branches run concurrently when threads allow.
    #[default]
    Parallel,
    /// One branch after the other, composed from primitive tape ops.
    Sequential,
}

/// `(f·Wk, f·Wv)`.
pub fn project_modality_kv<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    branch: &BranchParams,
    f: Var,
) -> Result<(Var, Var)> {
    let keys = tape.matmul(f, bind[branch.wk])?;
    let values = tape.matmul(f, bind[branch.wv])?;
    Ok((keys, values))
}

/// Self-attention over the segment query slots.
pub fn enhance_segment_queries<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    dec: &DecoderParams,
) -> Result<Var> {
    dec.self_attn
        .forward(tape, bind, bind[dec.segment_queries], None)
}

/// `α_v·Att_v + α_q·Att_q` with `Att_x = MultiAtt(S̄, K_x, V_x)`.
pub fn parallel_cross_attention<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    dec: &DecoderParams,
    sbar: Var,
    kv_video: (Var, Var),
    kv_query: (Var, Var),
    mode: BranchMode,
) -> Result<Var> {
    let branch = |p: &BranchParams, (keys, values): (Var, Var)| CrossBranch {
        wq: bind[p.wq],
        keys,
        values,
        wo: bind[p.wo],
        alpha: bind[p.alpha],
    };
    let branches = [branch(&dec.video, kv_video), branch(&dec.query, kv_query)];
    match mode {
        BranchMode::Parallel => tape.dual_cross_attention(sbar, branches, dec.heads, true),
        BranchMode::Sequential => {
            let mut parts = Vec::with_capacity(2);
            for b in &branches {
                let q = tape.matmul(sbar, b.wq)?;
                let a = tape.attention(q, b.keys, b.values, dec.heads, None)?;
                let o = tape.matmul(a, b.wo)?;
                parts.push(tape.scale_by(o, b.alpha)?);
            }
            tape.add(parts[0], parts[1])
        }
    }
}

/// Cycle-consistency loss formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmccMode {
    /// `exp(-cos(assignment, one_hot(j)))` averaged over phrases.
    #[default]
    Distribution,
    /// `exp(-cos(p, j))` between the scalar soft location and the index.
    LiteralScalar,
}

/// Tape variables of the phrase → clip → phrase cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleVars {
    /// `J×P` weights of every phrase over the clips.
    pub clip_weights: Var,
    /// `J×D` soft nearest clips.
    pub nearest: Var,
    /// `J×J` assignment of every soft nearest clip over the phrases.
    pub assignment: Var,
    /// `J×1` soft phrase locations (1-based).
    pub location: Var,
}

fn neg_distance_softmax<F: Real>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let d = tape.pairwise_sq_dist(a, b)?;
    let d = tape.scale(d, -1.0)?;
    tape.softmax_rows(d)
}

/// `Σ_r softmax_r(-‖h_j - c_r‖²)·c_r` for every phrase row `h_j`.
pub fn soft_nearest_clip<F: Real>(
    tape: &mut Tape<F>,
    phrases: Var,
    clips: Var,
) -> Result<(Var, Var)> {
    let w = neg_distance_softmax(tape, phrases, clips)?;
    let nearest = tape.matmul(w, clips)?;
    Ok((nearest, w))
}

/// Distance softmax of every clip row over the phrases, and its expected
/// 1-based phrase index.
pub fn soft_phrase_location<F: Real>(
    tape: &mut Tape<F>,
    clips: Var,
    phrases: Var,
) -> Result<(Var, Var)> {
    let j = tape.shape(phrases).rows;
    let w = neg_distance_softmax(tape, clips, phrases)?;
    let idx: Vec<f64> = (1..=j).map(|i| i as f64).collect();
    let idx = tape.constant(Tensor::from_f64(j, 1, &idx)?)?;
    let p = tape.matmul(w, idx)?;
    Ok((p, w))
}

pub fn cycle<F: Real>(tape: &mut Tape<F>, clips: Var, phrases: Var) -> Result<CycleVars> {
    if tape.shape(clips).rows == 0 || tape.shape(phrases).rows == 0 {
        return Err(HlgtError::Empty("cycle-consistency inputs"));
    }
    let (nearest, clip_weights) = soft_nearest_clip(tape, phrases, clips)?;
    let (location, assignment) = soft_phrase_location(tape, nearest, phrases)?;
    Ok(CycleVars {
        clip_weights,
        nearest,
        assignment,
        location,
    })
}

/// Mean over phrases of the cycle penalty; `clips` is `P×D`, `phrases` `J×D`.
pub fn cmcc_loss<F: Real>(
    tape: &mut Tape<F>,
    clips: Var,
    phrases: Var,
    mode: CmccMode,
) -> Result<Var> {
    let j = tape.shape(phrases).rows;
    let cyc = cycle(tape, clips, phrases)?;
    let cos = match mode {
        CmccMode::Distribution => {
            let eye = tape.constant(Tensor::identity(j))?;
            let diag = tape.mul(cyc.assignment, eye)?;
            let diag = tape.row_sums(diag)?;
            let sq = tape.square(cyc.assignment)?;
            let norm = tape.row_sums(sq)?;
            let norm = tape.sqrt(norm)?;
            tape.div(diag, norm)?
        }
        CmccMode::LiteralScalar => {
            let idx: Vec<f64> = (1..=j).map(|i| i as f64).collect();
            let idx = tape.constant(Tensor::from_f64(j, 1, &idx)?)?;
            let num = tape.mul(cyc.location, idx)?;
            let mag = tape.abs(cyc.location)?;
            let den = tape.mul(mag, idx)?;
            tape.div(num, den)?
        }
    };
    let neg = tape.scale(cos, -1.0)?;
    let e = tape.exp(neg)?;
    let total = tape.sum_all(e)?;
    tape.scale(total, 1.0 / j as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(tape: &mut Tape<f64>, r: usize, c: usize, data: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(r, c, data).unwrap())
            .unwrap()
    }

    #[test]
    fn nearest_clip_examples() {
        let mut tape = Tape::<f64>::new();
        let clips = rows(&mut tape, 3, 2, &[0.0, 0.0, 10.0, 0.0, 0.0, 10.0]);
        let phrase = rows(&mut tape, 1, 2, &[10.0, 0.0]);
        let (n, _) = soft_nearest_clip(&mut tape, phrase, clips).unwrap();
        let v = tape.value(n);
        assert!((v.get(0, 0) - 10.0).abs() < 1e-9 && v.get(0, 1).abs() < 1e-9);

        let two = rows(&mut tape, 2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        let origin = rows(&mut tape, 1, 2, &[0.0, 3.0]);
        let (n, _) = soft_nearest_clip(&mut tape, origin, two).unwrap();
        assert!(tape.value(n).data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn phrase_location_examples() {
        let mut tape = Tape::<f64>::new();
        let one = rows(&mut tape, 1, 1, &[4.0]);
        let clip = rows(&mut tape, 1, 1, &[-3.0]);
        let (p, _) = soft_phrase_location(&mut tape, clip, one).unwrap();
        assert_eq!(tape.scalar(p), 1.0);

        let two = rows(&mut tape, 2, 1, &[-1.0, 1.0]);
        let mid = rows(&mut tape, 1, 1, &[0.0]);
        let (p, _) = soft_phrase_location(&mut tape, mid, two).unwrap();
        assert!((tape.scalar(p) - 1.5).abs() < 1e-12);

        let three = rows(&mut tape, 3, 1, &[0.0, 10.0, 20.0]);
        let at2 = rows(&mut tape, 1, 1, &[10.0]);
        let (p, w) = soft_phrase_location(&mut tape, at2, three).unwrap();
        assert!((tape.scalar(p) - 2.0).abs() < 1e-9);
        assert!((tape.value(w).get(0, 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cmcc_single_phrase_is_inverse_e() {
        let mut tape = Tape::<f64>::new();
        let clips = rows(&mut tape, 2, 2, &[0.3, 1.0, -2.0, 0.5]);
        let phrase = rows(&mut tape, 1, 2, &[0.1, 0.1]);
        let l = cmcc_loss(&mut tape, clips, phrase, CmccMode::Distribution).unwrap();
        assert!((tape.scalar(l) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn literal_scalar_is_constant() {
        let mut tape = Tape::<f64>::new();
        let clips = rows(&mut tape, 2, 1, &[0.0, 1.0]);
        let phrases = rows(&mut tape, 2, 1, &[0.2, 0.7]);
        let l = cmcc_loss(&mut tape, clips, phrases, CmccMode::LiteralScalar).unwrap();
        assert!((tape.scalar(l) - (-1.0f64).exp()).abs() < 1e-12);
    }
}
