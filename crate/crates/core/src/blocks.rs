//! Parameterized building blocks: linear layers, layer norm, the TRM
//! transformer block, multi-head attention, attention-based fusion and
//! sinusoidal positional encodings.

use crate::error::{HlgtError, Result};
use crate::params::{Binding, Initializer, ParamId, ParamStore};
use crate::tensor::{KeyRange, Real, Tape, Tensor, Var};

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore<f32>,
    init: &'a mut Initializer,
    prefix: Vec<String>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, init: &'a mut Initializer) -> Self {
        ParamBuilder {
            store,
            init,
            prefix: Vec::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let t = self.init.uniform(rows, cols);
        self.store.add(self.full_name(name), t)
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let t = self.init.normal(rows, cols, std);
        self.store.add(self.full_name(name), t)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f32) -> ParamId {
        self.store
            .add(self.full_name(name), Tensor::filled(rows, cols, value))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, input: usize, output: usize) -> Self {
        pb.scope(name, |pb| Linear {
            w: pb.uniform("w", input, output),
            b: pb.constant("b", 1, output, 0.0),
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind[self.w])?;
        tape.add_row_bias(y, bind[self.b])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scope(name, |pb| LayerNormParams {
            gain: pb.constant("gain", 1, dim, 1.0),
            bias: pb.constant("bias", 1, dim, 0.0),
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, bind[self.gain], bind[self.bias])
    }
}

/// Two linear layers with GELU between; hidden width `4·D`.
#[derive(Debug, Clone, Copy)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
}

impl Ffn {
    pub const EXPANSION: usize = 4;

    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scope(name, |pb| Ffn {
            l1: Linear::new(pb, "l1", dim, Self::EXPANSION * dim),
            l2: Linear::new(pb, "l2", Self::EXPANSION * dim, dim),
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, bind, x)?;
        let h = tape.gelu(h)?;
        self.l2.forward(tape, bind, h)
    }
}

/// Query/key/value/output projections of a multi-head attention.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        pb.scope(name, |pb| AttentionParams {
            wq: pb.uniform("wq", dim, dim),
            wk: pb.uniform("wk", dim, dim),
            wv: pb.uniform("wv", dim, dim),
            wo: pb.uniform("wo", dim, dim),
            heads,
        })
    }

    /// Standard multi-head attention: every output row is, per head, a
    /// convex combination of projected value rows.
    pub fn attend<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        queries: Var,
        keys: Var,
        values: Var,
        ranges: Option<Vec<KeyRange>>,
    ) -> Result<Var> {
        let (sk, sv) = (tape.shape(keys), tape.shape(values));
        if sk.rows != sv.rows {
            return Err(HlgtError::Dimension {
                op: "multi_head_attention(keys/values)",
                lhs: sk.dims(),
                rhs: sv.dims(),
            });
        }
        let q = tape.matmul(queries, bind[self.wq])?;
        let k = tape.matmul(keys, bind[self.wk])?;
        let v = tape.matmul(values, bind[self.wv])?;
        let a = tape.attention(q, k, v, self.heads, ranges)?;
        tape.matmul(a, bind[self.wo])
    }
}

/// Transformer block: multi-head attention, add & norm, feed-forward,
/// add & norm (post-norm layout).
#[derive(Debug, Clone, Copy)]
pub struct TrmParams {
    pub attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: Ffn,
    pub norm2: LayerNormParams,
}

impl TrmParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Self {
        pb.scope(name, |pb| TrmParams {
            attn: AttentionParams::new(pb, "attn", dim, heads),
            norm1: LayerNormParams::new(pb, "norm1", dim),
            ffn: Ffn::new(pb, "ffn", dim),
            norm2: LayerNormParams::new(pb, "norm2", dim),
        })
    }

    /// Self-attention over the rows of `x` (`L×D`). With `ranges`, row `i`
    /// only attends to keys in `ranges[i]`, which runs several independent
    /// sequences through one call.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        x: Var,
        ranges: Option<Vec<KeyRange>>,
    ) -> Result<Var> {
        let a = self.attn.attend(tape, bind, x, x, x, ranges)?;
        self.finish(tape, bind, x, a)
    }

    /// Cross-attention variant: rows of `queries` attend to `context`.
    pub fn forward_cross<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        queries: Var,
        context: Var,
    ) -> Result<Var> {
        let a = self
            .attn
            .attend(tape, bind, queries, context, context, None)?;
        self.finish(tape, bind, queries, a)
    }

    fn finish<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        residual: Var,
        a: Var,
    ) -> Result<Var> {
        let y = tape.add(residual, a)?;
        let y = self.norm1.forward(tape, bind, y)?;
        let f = self.ffn.forward(tape, bind, y)?;
        let z = tape.add(y, f)?;
        self.norm2.forward(tape, bind, z)
    }
}

/// Tokens stacked as `blocks` groups of `block_len` rows; group `b` has
/// `valid[b]` real rows followed by padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub block_len: usize,
    /// Source row of every stacked row.
    pub indices: Vec<usize>,
    pub valid: Vec<usize>,
}

impl BlockLayout {
    /// One block covering `len` rows in order.
    pub fn single(len: usize) -> Self {
        BlockLayout {
            block_len: len,
            indices: (0..len).collect(),
            valid: vec![len],
        }
    }

    pub fn blocks(&self) -> usize {
        self.valid.len()
    }

    pub fn is_identity(&self) -> bool {
        self.blocks() == 1 && self.indices.iter().enumerate().all(|(i, &s)| i == s)
    }

    /// Per stacked row, the key interval of its own block's real rows.
    pub fn key_ranges(&self) -> Vec<KeyRange> {
        let mut out = Vec::with_capacity(self.indices.len());
        for (b, &v) in self.valid.iter().enumerate() {
            let lo = b * self.block_len;
            out.extend(std::iter::repeat_n(
                KeyRange::new(lo, lo + v),
                self.block_len,
            ));
        }
        out
    }

    /// Per block, the interval of real rows within the block.
    pub fn valid_ranges(&self) -> Vec<KeyRange> {
        self.valid.iter().map(|&v| KeyRange::new(0, v)).collect()
    }
}

/// Attention-based pooling: per-token score `w4·GELU(W5·z + b1) + b2`,
/// softmax across tokens, weighted sum of tokens.
#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    pub w5: Linear,
    pub w4: Linear,
}

impl FusionParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, hidden: usize) -> Self {
        pb.scope(name, |pb| FusionParams {
            w5: Linear::new(pb, "w5", dim, hidden),
            w4: Linear::new(pb, "w4", hidden, 1),
        })
    }

    /// Pools every block of `tokens` to one row; padding rows get zero
    /// weight. Returns `(pooled blocks×D, weights blocks×block_len)`.
    pub fn pool<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        tokens: Var,
        layout: &BlockLayout,
    ) -> Result<(Var, Var)> {
        if tape.shape(tokens).rows != layout.indices.len() {
            return Err(HlgtError::Dimension {
                op: "attention_fusion",
                lhs: tape.shape(tokens).dims(),
                rhs: vec![layout.indices.len()],
            });
        }
        let h = self.w5.forward(tape, bind, tokens)?;
        let h = tape.gelu(h)?;
        let scores = self.w4.forward(tape, bind, h)?;
        let scores = tape.reshape(scores, layout.blocks(), layout.block_len)?;
        let weights = tape.softmax_rows_ranged(scores, &layout.valid_ranges())?;
        let pooled = tape.group_weighted_sum(weights, tokens)?;
        Ok((pooled, weights))
    }

    /// Pools a whole `S×D` sequence into a `1×D` vector.
    pub fn fuse<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, seq: Var) -> Result<Var> {
        let rows = tape.shape(seq).rows;
        Ok(self.pool(tape, bind, seq, &BlockLayout::single(rows))?.0)
    }
}

/// Precomputed sinusoidal table: `pe[t][2j] = sin(t / 10000^(2j/dim))`,
/// `pe[t][2j+1] = cos(t / 10000^(2j/dim))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    dim: usize,
    max_len: usize,
    table: Vec<f64>,
}

impl PositionalEncoding {
    pub fn new(dim: usize, max_len: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(HlgtError::InvalidArgument(format!(
                "positional encoding dimension must be positive and even, got {dim}"
            )));
        }
        if max_len == 0 {
            return Err(HlgtError::InvalidArgument(
                "positional encoding max_len must be positive".into(),
            ));
        }
        let mut table = vec![0.0; dim * max_len];
        for t in 0..max_len {
            for j in 0..dim / 2 {
                let freq = 10000f64.powf(2.0 * j as f64 / dim as f64);
                let angle = t as f64 / freq;
                table[t * dim + 2 * j] = angle.sin();
                table[t * dim + 2 * j + 1] = angle.cos();
            }
        }
        Ok(PositionalEncoding {
            dim,
            max_len,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn at(&self, t: usize) -> Result<&[f64]> {
        if t >= self.max_len {
            return Err(HlgtError::OutOfRange {
                index: t,
                limit: self.max_len,
            });
        }
        Ok(&self.table[t * self.dim..(t + 1) * self.dim])
    }

    /// Encodings for positions `0..rows` as a tensor.
    pub fn rows<F: Real>(&self, rows: usize) -> Result<Tensor<F>> {
        if rows > self.max_len {
            return Err(HlgtError::OutOfRange {
                index: rows - 1,
                limit: self.max_len,
            });
        }
        Tensor::from_f64(rows, self.dim, &self.table[..rows * self.dim])
    }
}
