//! Hierarchical encoder: local (clip / phrase) and global (video / query)
//! representations fused by the global-local transformer.

use crate::blocks::{
    BlockLayout, FusionParams, Linear, ParamBuilder, PositionalEncoding, TrmParams,
};
use crate::error::{HlgtError, Result};
use crate::params::{Binding, ParamId};
use crate::tensor::{Real, Tape, Var};

/// Contiguous half-open row interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Partition of a frame sequence into fixed-length clips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipSet {
    pub clip_len: usize,
    pub overlap: usize,
    /// Frames covered by each clip, before padding.
    pub spans: Vec<Span>,
}

impl ClipSet {
    pub fn count(&self) -> usize {
        self.spans.len()
    }

    /// Every clip padded to `clip_len` rows by repeating its last frame.
    pub fn layout(&self) -> BlockLayout {
        let mut indices = Vec::with_capacity(self.count() * self.clip_len);
        for s in &self.spans {
            indices.extend(s.start..s.end);
            indices.extend(std::iter::repeat_n(s.end - 1, self.clip_len - s.len()));
        }
        BlockLayout {
            block_len: self.clip_len,
            indices,
            valid: self.spans.iter().map(Span::len).collect(),
        }
    }
}

/// Clips start at multiples of `clip_len - overlap` until one reaches the
/// last frame.
pub fn split_clips(frames: usize, clip_len: usize, overlap: usize) -> Result<ClipSet> {
    if frames == 0 {
        return Err(HlgtError::Empty("video"));
    }
    if clip_len == 0 || overlap >= clip_len {
        return Err(HlgtError::InvalidArgument(format!(
            "clip overlap {overlap} must be smaller than clip length {clip_len}"
        )));
    }
    let stride = clip_len - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + clip_len).min(frames);
        spans.push(Span { start, end });
        if end == frames {
            break;
        }
        start += stride;
    }
    Ok(ClipSet {
        clip_len,
        overlap,
        spans,
    })
}

/// Partition of a word sequence into contiguous phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    pub spans: Vec<Span>,
}

impl PhraseSet {
    pub fn count(&self) -> usize {
        self.spans.len()
    }

    /// Phrases padded to the longest phrase by repeating their last word.
    pub fn layout(&self) -> BlockLayout {
        let block_len = self.spans.iter().map(Span::len).max().unwrap_or(1);
        let mut indices = Vec::with_capacity(self.count() * block_len);
        for s in &self.spans {
            indices.extend(s.start..s.end);
            indices.extend(std::iter::repeat_n(s.end - 1, block_len - s.len()));
        }
        BlockLayout {
            block_len,
            indices,
            valid: self.spans.iter().map(Span::len).collect(),
        }
    }
}

/// `phrases` near-equal contiguous chunks; earlier chunks take the remainder.
pub fn phrase_spans(words: usize, phrases: usize) -> Result<PhraseSet> {
    if phrases == 0 || phrases > words {
        return Err(HlgtError::InvalidArgument(format!(
            "cannot split {words} words into {phrases} phrases"
        )));
    }
    let (base, extra) = (words / phrases, words % phrases);
    let mut spans = Vec::with_capacity(phrases);
    let mut start = 0;
    for j in 0..phrases {
        let len = base + usize::from(j < extra);
        spans.push(Span {
            start,
            end: start + len,
        });
        start += len;
    }
    Ok(PhraseSet { spans })
}

/// Word-level convolutions with window widths 1, 2 and 3.
/// `kernels[s-1][k]` weights the word `k` positions ahead in window `s`.
#[derive(Debug, Clone)]
pub struct PhraseConv {
    pub kernels: Vec<Vec<ParamId>>,
    pub biases: Vec<ParamId>,
}

impl PhraseConv {
    pub const WINDOWS: usize = 3;

    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scope(name, |pb| {
            let mut kernels = Vec::new();
            let mut biases = Vec::new();
            for s in 1..=Self::WINDOWS {
                kernels.push(
                    (0..s)
                        .map(|k| pb.uniform(&format!("w{s}_{k}"), dim, dim))
                        .collect(),
                );
                biases.push(pb.constant(&format!("b{s}"), 1, dim, 0.0));
            }
            PhraseConv { kernels, biases }
        })
    }

    /// Per-word features `max_s tanh(Σ_k q_{n+k}·W_{s,k} + b_s)`, zero past
    /// the end of the sentence.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, words: Var) -> Result<Var> {
        let mut best: Option<Var> = None;
        for (ws, &b) in self.kernels.iter().zip(&self.biases) {
            let mut acc: Option<Var> = None;
            for (k, &w) in ws.iter().enumerate() {
                let shifted = if k == 0 {
                    words
                } else {
                    tape.shift_rows_up(words, k)?
                };
                let term = tape.matmul(shifted, bind[w])?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            let pre = tape.add_row_bias(acc.expect("window has a kernel"), bind[b])?;
            let out = tape.tanh(pre)?;
            best = Some(match best {
                None => out,
                Some(m) => tape.maximum(m, out)?,
            });
        }
        Ok(best.expect("at least one window"))
    }
}

/// Parameters of one modality's encoder stack. The temporal transformer and
/// fusion are shared by every local block and the global sequence.
#[derive(Debug, Clone)]
pub struct ModalityEncoder {
    pub temporal: TrmParams,
    pub fusion: FusionParams,
    pub local_trm: TrmParams,
    pub global_trm: TrmParams,
    pub assemble: Linear,
}

impl ModalityEncoder {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        dim: usize,
        heads: usize,
        fusion_hidden: usize,
    ) -> Self {
        pb.scope(name, |pb| ModalityEncoder {
            temporal: TrmParams::new(pb, "temporal", dim, heads),
            fusion: FusionParams::new(pb, "fusion", dim, fusion_hidden),
            local_trm: TrmParams::new(pb, "local_trm", dim, heads),
            global_trm: TrmParams::new(pb, "global_trm", dim, heads),
            assemble: Linear::new(pb, "assemble", 2 * dim, dim),
        })
    }
}

/// Intermediate results of the global-local stage.
#[derive(Debug, Clone, Copy)]
pub struct LocalGlobalFeatures {
    /// `P×D` outputs of the local transformer.
    pub local_tokens: Var,
    /// `1×D` mean of the local tokens.
    pub local_summary: Var,
    /// `1×D` global token attended over the local tokens.
    pub global_summary: Var,
    /// `1×D` pooled global sequence that seeded the global transformer.
    pub global_seed: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedModality {
    /// `P×D` fused per-token features.
    pub tokens: Var,
    /// `1×2D` concatenation of the local and global summaries.
    pub pooled: Var,
    /// `P×D` local vectors before the global-local stage.
    pub locals: Var,
}

/// Temporal transformer inside every block followed by attention fusion;
/// one `1×D` row per block.
pub fn encode_local<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    enc: &ModalityEncoder,
    tokens: Var,
    layout: &BlockLayout,
) -> Result<Var> {
    if layout.valid.contains(&0) || layout.blocks() == 0 {
        return Err(HlgtError::Empty("local block"));
    }
    let stacked = if layout.is_identity() {
        tokens
    } else {
        tape.gather_rows(tokens, &layout.indices)?
    };
    let ranges = (layout.blocks() > 1).then(|| layout.key_ranges());
    let hidden = enc.temporal.forward(tape, bind, stacked, ranges)?;
    Ok(enc.fusion.pool(tape, bind, hidden, layout)?.0)
}

/// Temporal transformer over the whole sequence followed by fusion.
pub fn encode_global<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    enc: &ModalityEncoder,
    seq: Var,
) -> Result<Var> {
    let hidden = enc.temporal.forward(tape, bind, seq, None)?;
    enc.fusion.fuse(tape, bind, hidden)
}

/// Local self-attention over the local vectors (with positional encodings
/// when given), then the global vector attends over the resulting tokens.
pub fn global_local_transform<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    enc: &ModalityEncoder,
    locals: Var,
    global_seed: Var,
    pe: Option<&PositionalEncoding>,
) -> Result<LocalGlobalFeatures> {
    let rows = tape.shape(locals).rows;
    let input = match pe {
        Some(pe) => {
            let table = tape.constant(pe.rows(rows)?)?;
            tape.add(locals, table)?
        }
        None => locals,
    };
    let local_tokens = enc.local_trm.forward(tape, bind, input, None)?;
    let local_summary = tape.mean_rows(local_tokens)?;
    let global_summary = enc
        .global_trm
        .forward_cross(tape, bind, global_seed, local_tokens)?;
    Ok(LocalGlobalFeatures {
        local_tokens,
        local_summary,
        global_summary,
        global_seed,
    })
}

/// Concatenates every local token with the broadcast global summary and
/// projects back to `D`.
pub fn assemble_features<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    enc: &ModalityEncoder,
    lg: &LocalGlobalFeatures,
    locals: Var,
) -> Result<EncodedModality> {
    let rows = tape.shape(lg.local_tokens).rows;
    let global = tape.broadcast_rows(lg.global_summary, rows)?;
    let joined = tape.concat_cols(lg.local_tokens, global)?;
    let tokens = enc.assemble.forward(tape, bind, joined)?;
    let pooled = tape.concat_cols(lg.local_summary, lg.global_summary)?;
    Ok(EncodedModality {
        tokens,
        pooled,
        locals,
    })
}

/// Local and global branches for one modality. `block_tokens` feeds the
/// local branch and `sequence` the global branch; for video they are the
/// same frames, for text the phrase-convolved and raw word features.
pub fn encode_modality<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    enc: &ModalityEncoder,
    block_tokens: Var,
    sequence: Var,
    layout: &BlockLayout,
    pe: Option<&PositionalEncoding>,
) -> Result<EncodedModality> {
    let locals = encode_local(tape, bind, enc, block_tokens, layout)?;
    let seed = encode_global(tape, bind, enc, sequence)?;
    let lg = global_local_transform(tape, bind, enc, locals, seed, pe)?;
    assemble_features(tape, bind, enc, &lg, locals)
}
