use std::sync::Arc;

use super::kernels::{self, AttentionSaved};
use super::{Real, Shape, Tensor};
use crate::error::{HlgtError, Result};

pub use super::kernels::KeyRange;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    AddRowBias,
    BroadcastRows,
    ScaleBy,
    Scale,
    AddConst,
    Gelu,
    Tanh,
    Exp,
    Sigmoid,
    Sqrt,
    Abs,
    Square,
    Clamp01,
    Maximum,
    Minimum,
    SoftmaxRows,
    ConcatCols,
    ConcatRows,
    SliceCols,
    GatherRows,
    Reshape,
    SumAll,
    MeanRows,
    RowSums,
    LayerNorm,
    Attention,
    DualCrossAttention,
    PairwiseSqDist,
    GroupWeightedSum,
    ShiftRowsUp,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::AddRowBias => "add_row_bias",
            OpKind::BroadcastRows => "broadcast_rows",
            OpKind::ScaleBy => "scale_by",
            OpKind::Scale => "scale",
            OpKind::AddConst => "add_const",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sqrt => "sqrt",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Clamp01 => "clamp01",
            OpKind::Maximum => "maximum",
            OpKind::Minimum => "minimum",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceCols => "slice_cols",
            OpKind::GatherRows => "gather_rows",
            OpKind::Reshape => "reshape",
            OpKind::SumAll => "sum_all",
            OpKind::MeanRows => "mean_rows",
            OpKind::RowSums => "row_sums",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Attention => "attention",
            OpKind::DualCrossAttention => "dual_cross_attention",
            OpKind::PairwiseSqDist => "pairwise_sq_dist",
            OpKind::GroupWeightedSum => "group_weighted_sum",
            OpKind::ShiftRowsUp => "shift_rows_up",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }
}

const ALL_KINDS: [OpKind; 37] = [
    OpKind::Leaf,
    OpKind::MatMul,
    OpKind::Transpose,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Div,
    OpKind::AddRowBias,
    OpKind::BroadcastRows,
    OpKind::ScaleBy,
    OpKind::Scale,
    OpKind::AddConst,
    OpKind::Gelu,
    OpKind::Tanh,
    OpKind::Exp,
    OpKind::Sigmoid,
    OpKind::Sqrt,
    OpKind::Abs,
    OpKind::Square,
    OpKind::Clamp01,
    OpKind::Maximum,
    OpKind::Minimum,
    OpKind::SoftmaxRows,
    OpKind::ConcatCols,
    OpKind::ConcatRows,
    OpKind::SliceCols,
    OpKind::GatherRows,
    OpKind::Reshape,
    OpKind::SumAll,
    OpKind::MeanRows,
    OpKind::RowSums,
    OpKind::LayerNorm,
    OpKind::Attention,
    OpKind::DualCrossAttention,
    OpKind::PairwiseSqDist,
    OpKind::GroupWeightedSum,
    OpKind::ShiftRowsUp,
];

/// Deliberately corrupts the backward rule of one operation kind by scaling
/// the gradient flowing through it. Negative control for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub kind: OpKind,
    pub factor: f64,
}

impl std::str::FromStr for Fault {
    type Err = HlgtError;

    /// Parses `kind:factor`, e.g. `softmax_rows:1.5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || HlgtError::InvalidArgument(format!("fault must look like `kind:factor`, got `{s}`"));
        let (kind, factor) = s.split_once(':').ok_or_else(bad)?;
        let kind = OpKind::parse(kind.trim())
            .ok_or_else(|| HlgtError::InvalidArgument(format!("unknown op kind `{kind}`")))?;
        let factor: f64 = factor.trim().parse().map_err(|_| bad())?;
        if !factor.is_finite() {
            return Err(bad());
        }
        Ok(Fault { kind, factor })
    }
}

/// One branch of a fused two-branch cross-attention.
#[derive(Debug, Clone, Copy)]
pub struct CrossBranch {
    pub wq: Var,
    pub keys: Var,
    pub values: Var,
    pub wo: Var,
    pub alpha: Var,
}

#[derive(Debug, Clone)]
struct BranchSaved<F> {
    q: Vec<F>,
    attn: AttentionSaved<F>,
    heads_out: Vec<F>,
    att: Vec<F>,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRowBias(Var, Var),
    BroadcastRows(Var),
    ScaleBy(Var, Var),
    Scale(Var, F),
    AddConst(Var),
    Unary(Var, OpKind),
    Maximum(Var, Var),
    Minimum(Var, Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SumAll(Var),
    MeanRows(Var),
    RowSums(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: F,
        ranges: Option<Vec<KeyRange>>,
        saved: AttentionSaved<F>,
    },
    DualCrossAttention {
        s: Var,
        branches: [CrossBranch; 2],
        heads: usize,
        parallel: bool,
        saved: Box<[BranchSaved<F>; 2]>,
    },
    PairwiseSqDist(Var, Var),
    GroupWeightedSum(Var, Var),
    ShiftRowsUp(Var, usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    kind: OpKind,
    requires_grad: bool,
    scope: Arc<str>,
}

/// Append-only record of operations. Nodes are stored in creation order,
/// which is a valid topological order; `backward` sweeps it once in reverse.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    backward_done: bool,
    scopes: Vec<Arc<str>>,
    fault: Option<Fault>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(s: Shape) -> Vec<usize> {
    s.dims()
}

fn attention_scale<F: Real>(d: usize, heads: usize) -> F {
    F::of(1.0 / ((d / heads) as f64).sqrt())
}

fn scale_by_forward<F: Real>(a: &[F], s: F) -> Vec<F> {
    a.iter().map(|&x| x * s).collect()
}

fn scale_by_backward<F: Real>(g: &[F], a: &[F], s: F) -> (Vec<F>, F) {
    let da = g.iter().map(|&x| x * s).collect();
    let mut ds = F::zero();
    for (&gi, &ai) in g.iter().zip(a) {
        ds += gi * ai;
    }
    (da, ds)
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            scopes: vec![Arc::from("")],
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Runs `f` with `name` appended to the diagnostic scope path.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let cur = self.scopes.last().cloned().unwrap_or_else(|| Arc::from(""));
        let next: Arc<str> = if cur.is_empty() {
            Arc::from(name)
        } else {
            Arc::from(format!("{cur}.{name}"))
        };
        self.scopes.push(next);
        let out = f(self);
        self.scopes.pop();
        out
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].kind
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<F> {
        self.grad(v)
            .map(<[F]>::to_vec)
            .unwrap_or_else(|| vec![F::zero(); self.shape(v).len()])
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(HlgtError::NonFinite {
                op: kind.name(),
                scope: self
                    .scopes
                    .last()
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                node: idx,
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            kind,
            requires_grad,
            scope: self.scopes.last().cloned().unwrap_or_else(|| Arc::from("")),
        });
        Ok(Var(idx))
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(HlgtError::NonFinite {
                op: "leaf",
                scope: self
                    .scopes
                    .last()
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                node: idx,
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            kind: OpKind::Leaf,
            requires_grad,
            scope: self.scopes.last().cloned().unwrap_or_else(|| Arc::from("")),
        });
        Ok(Var(idx))
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(HlgtError::Dimension {
                op,
                lhs: dims(sa),
                rhs: dims(sb),
            });
        }
        Ok(sa)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Vec<F> {
        self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(HlgtError::Dimension {
                op: "matmul",
                lhs: dims(sa),
                rhs: dims(sb),
            });
        }
        let data = kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            sa.rows,
            sa.cols,
            sb.cols,
        );
        let out = Tensor::from_parts(Shape::new(sa.rows, sb.cols), data);
        self.push(out, Op::MatMul(a, b), OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let x = self.value(a).data();
        let mut data = vec![F::zero(); s.len()];
        for r in 0..s.rows {
            for c in 0..s.cols {
                data[c * s.rows + r] = x[r * s.cols + c];
            }
        }
        let out = Tensor::from_parts(Shape::new(s.cols, s.rows), data);
        self.push(out, Op::Transpose(a), OpKind::Transpose, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| x + y));
        self.push(out, Op::Add(a, b), OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("sub", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| x - y));
        self.push(out, Op::Sub(a, b), OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("mul", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| x * y));
        self.push(out, Op::Mul(a, b), OpKind::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("div", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| x / y));
        self.push(out, Op::Div(a, b), OpKind::Div, &[a, b])
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("maximum", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| if x >= y { x } else { y }));
        self.push(out, Op::Maximum(a, b), OpKind::Maximum, &[a, b])
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("minimum", a, b)?;
        let out = Tensor::from_parts(s, self.zip_with(a, b, |x, y| if x <= y { x } else { y }));
        self.push(out, Op::Minimum(a, b), OpKind::Minimum, &[a, b])
    }

    /// `a (m×n) + bias (1×n)` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.rows != 1 || sb.cols != sa.cols {
            return Err(HlgtError::Dimension {
                op: "add_row_bias",
                lhs: dims(sa),
                rhs: dims(sb),
            });
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(sa.cols)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::from_parts(sa, data);
        self.push(out, Op::AddRowBias(a, bias), OpKind::AddRowBias, &[a, bias])
    }

    /// Repeats a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.rows != 1 || rows == 0 {
            return Err(HlgtError::Dimension {
                op: "broadcast_rows",
                lhs: dims(s),
                rhs: vec![rows],
            });
        }
        let row = self.value(a).data();
        let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
        let out = Tensor::from_parts(Shape::new(rows, s.cols), data);
        self.push(out, Op::BroadcastRows(a), OpKind::BroadcastRows, &[a])
    }

    /// Multiplies every entry of `a` by the `1×1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != Shape::scalar() {
            return Err(HlgtError::Dimension {
                op: "scale_by",
                lhs: dims(self.shape(a)),
                rhs: dims(ss),
            });
        }
        let data = scale_by_forward(self.value(a).data(), self.scalar(s));
        let out = Tensor::from_parts(self.shape(a), data);
        self.push(out, Op::ScaleBy(a, s), OpKind::ScaleBy, &[a, s])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = F::of(c);
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_parts(self.shape(a), data);
        self.push(out, Op::Scale(a, c), OpKind::Scale, &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = F::of(c);
        let data = self.value(a).data().iter().map(|&x| x + c).collect();
        let out = Tensor::from_parts(self.shape(a), data);
        self.push(out, Op::AddConst(a), OpKind::AddConst, &[a])
    }

    fn unary(&mut self, a: Var, kind: OpKind, f: impl Fn(F) -> F) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_parts(self.shape(a), data);
        self.push(out, Op::Unary(a, kind), kind, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Gelu, kernels::gelu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Tanh, F::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Exp, F::exp)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Sigmoid, |x| F::one() / (F::one() + (-x).exp()))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Sqrt, F::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Abs, F::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Square, |x| x * x)
    }

    /// Clamps to `[0, 1]`; the gradient is zero outside the interval.
    pub fn clamp01(&mut self, a: Var) -> Result<Var> {
        self.unary(a, OpKind::Clamp01, |x| x.max(F::zero()).min(F::one()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if !self.value(a).is_finite() {
            return Err(HlgtError::NonFiniteInput("softmax_rows"));
        }
        let data = kernels::softmax_rows(self.value(a).data(), s.rows, s.cols, None);
        let out = Tensor::from_parts(s, data);
        self.push(out, Op::SoftmaxRows(a), OpKind::SoftmaxRows, &[a])
    }

    /// Row softmax restricted to one column interval per row; columns
    /// outside the interval get probability zero.
    pub fn softmax_rows_ranged(&mut self, a: Var, ranges: &[KeyRange]) -> Result<Var> {
        let s = self.shape(a);
        if ranges.len() != s.rows || ranges.iter().any(|r| r.lo >= r.hi || r.hi > s.cols) {
            return Err(HlgtError::InvalidArgument(
                "softmax ranges do not match the input extents".into(),
            ));
        }
        let data = kernels::softmax_rows(self.value(a).data(), s.rows, s.cols, Some(ranges));
        let out = Tensor::from_parts(s, data);
        self.push(out, Op::SoftmaxRows(a), OpKind::SoftmaxRows, &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rows != sb.rows {
            return Err(HlgtError::Dimension {
                op: "concat_cols",
                lhs: dims(sa),
                rhs: dims(sb),
            });
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(sa.len() + sb.len());
        for r in 0..sa.rows {
            data.extend_from_slice(&xa[r * sa.cols..(r + 1) * sa.cols]);
            data.extend_from_slice(&xb[r * sb.cols..(r + 1) * sb.cols]);
        }
        let out = Tensor::from_parts(Shape::new(sa.rows, sa.cols + sb.cols), data);
        self.push(out, Op::ConcatCols(a, b), OpKind::ConcatCols, &[a, b])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(HlgtError::Empty("concat_rows"))?;
        let cols = self.shape(*first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(HlgtError::Dimension {
                    op: "concat_rows",
                    lhs: dims(self.shape(*first)),
                    rhs: dims(s),
                });
            }
            rows += s.rows;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_parts(Shape::new(rows, cols), data);
        self.push(
            out,
            Op::ConcatRows(parts.to_vec()),
            OpKind::ConcatRows,
            parts,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let s = self.shape(a);
        if width == 0 || start + width > s.cols {
            return Err(HlgtError::OutOfRange {
                index: start + width,
                limit: s.cols,
            });
        }
        let x = self.value(a).data();
        let data = (0..s.rows)
            .flat_map(|r| {
                x[r * s.cols + start..r * s.cols + start + width]
                    .iter()
                    .copied()
            })
            .collect();
        let out = Tensor::from_parts(Shape::new(s.rows, width), data);
        self.push(out, Op::SliceCols(a, start), OpKind::SliceCols, &[a])
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if indices.is_empty() {
            return Err(HlgtError::Empty("gather_rows"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s.rows) {
            return Err(HlgtError::OutOfRange {
                index: bad,
                limit: s.rows,
            });
        }
        let x = self.value(a).data();
        let data = indices
            .iter()
            .flat_map(|&r| x[r * s.cols..(r + 1) * s.cols].iter().copied())
            .collect();
        let out = Tensor::from_parts(Shape::new(indices.len(), s.cols), data);
        self.push(
            out,
            Op::GatherRows(a, indices.to_vec()),
            OpKind::GatherRows,
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if rows * cols != s.len() || rows == 0 {
            return Err(HlgtError::Dimension {
                op: "reshape",
                lhs: dims(s),
                rhs: vec![rows, cols],
            });
        }
        let out = Tensor::from_parts(Shape::new(rows, cols), self.value(a).data().to_vec());
        self.push(out, Op::Reshape(a), OpKind::Reshape, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(total), Op::SumAll(a), OpKind::SumAll, &[a])
    }

    /// Column-wise mean over rows: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let x = self.value(a).data();
        let inv = F::one() / F::of(s.rows as f64);
        let mut data = vec![F::zero(); s.cols];
        for row in x.chunks(s.cols) {
            for (o, &v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut data {
            *o *= inv;
        }
        let out = Tensor::from_parts(Shape::new(1, s.cols), data);
        self.push(out, Op::MeanRows(a), OpKind::MeanRows, &[a])
    }

    /// Sum of each row: `m×n → m×1`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let data = self
            .value(a)
            .data()
            .chunks(s.cols)
            .map(|r| r.iter().copied().sum::<F>())
            .collect();
        let out = Tensor::from_parts(Shape::new(s.rows, 1), data);
        self.push(out, Op::RowSums(a), OpKind::RowSums, &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != Shape::new(1, s.cols) {
                return Err(HlgtError::Dimension {
                    op: "layer_norm",
                    lhs: dims(s),
                    rhs: dims(self.shape(p)),
                });
            }
        }
        let (y, xhat, inv) = kernels::layer_norm_forward(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            s.rows,
            s.cols,
        );
        let out = Tensor::from_parts(s, y);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv,
            },
            OpKind::LayerNorm,
            &[x, gain, bias],
        )
    }

    /// Multi-head scaled dot-product attention on already-projected
    /// queries (`m×d`), keys and values (`l×d`). Scale is `1/√(d/heads)`.
    /// `ranges`, when given, restricts each query row to a key interval.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        ranges: Option<Vec<KeyRange>>,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sk != sv {
            return Err(HlgtError::Dimension {
                op: "attention(keys/values)",
                lhs: dims(sk),
                rhs: dims(sv),
            });
        }
        if sq.cols != sk.cols {
            return Err(HlgtError::Dimension {
                op: "attention(queries/keys)",
                lhs: dims(sq),
                rhs: dims(sk),
            });
        }
        if heads == 0 || sq.cols % heads != 0 {
            return Err(HlgtError::InvalidArgument(format!(
                "feature width {} not divisible by {heads} heads",
                sq.cols
            )));
        }
        if let Some(rg) = &ranges {
            if rg.len() != sq.rows || rg.iter().any(|r| r.lo >= r.hi || r.hi > sk.rows) {
                return Err(HlgtError::InvalidArgument(
                    "attention key ranges do not match query/key extents".into(),
                ));
            }
        }
        let scale = attention_scale::<F>(sq.cols, heads);
        let (data, saved) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            sq.rows,
            sk.rows,
            sq.cols,
            heads,
            scale,
            ranges.as_deref(),
        );
        let out = Tensor::from_parts(sq, data);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                ranges,
                saved,
            },
            OpKind::Attention,
            &[q, k, v],
        )
    }

    fn branch_forward(&self, s: Var, b: &CrossBranch, heads: usize) -> BranchSaved<F> {
        let ss = self.shape(s);
        let (m, d) = (ss.rows, ss.cols);
        let l = self.shape(b.keys).rows;
        let q = kernels::matmul(self.value(s).data(), self.value(b.wq).data(), m, d, d);
        let (heads_out, attn) = kernels::attention_forward(
            &q,
            self.value(b.keys).data(),
            self.value(b.values).data(),
            m,
            l,
            d,
            heads,
            attention_scale::<F>(d, heads),
            None,
        );
        let att = kernels::matmul(&heads_out, self.value(b.wo).data(), m, d, d);
        BranchSaved {
            q,
            attn,
            heads_out,
            att,
        }
    }

    /// Two independent cross-attention branches sharing query `s`, combined
    /// as `α₀·Att₀ + α₁·Att₁`, recorded as a single node. With `parallel`
    /// set and more than one worker thread available the branches run
    /// concurrently. Arithmetic matches the unfused composition of
    /// `matmul → attention → matmul → scale_by → add` exactly.
    pub fn dual_cross_attention(
        &mut self,
        s: Var,
        branches: [CrossBranch; 2],
        heads: usize,
        parallel: bool,
    ) -> Result<Var> {
        let ss = self.shape(s);
        let d = ss.cols;
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(HlgtError::InvalidArgument(format!(
                "feature width {d} not divisible by {heads} heads"
            )));
        }
        for b in &branches {
            for w in [b.wq, b.wo] {
                if self.shape(w) != Shape::new(d, d) {
                    return Err(HlgtError::Dimension {
                        op: "dual_cross_attention(weights)",
                        lhs: vec![d, d],
                        rhs: dims(self.shape(w)),
                    });
                }
            }
            let (sk, sv) = (self.shape(b.keys), self.shape(b.values));
            if sk != sv || sk.cols != d {
                return Err(HlgtError::Dimension {
                    op: "dual_cross_attention(keys/values)",
                    lhs: dims(sk),
                    rhs: dims(sv),
                });
            }
            if self.shape(b.alpha) != Shape::scalar() {
                return Err(HlgtError::Dimension {
                    op: "dual_cross_attention(alpha)",
                    lhs: vec![1, 1],
                    rhs: dims(self.shape(b.alpha)),
                });
            }
        }
        let (first, second) = if parallel && rayon::current_num_threads() > 1 {
            rayon::join(
                || self.branch_forward(s, &branches[0], heads),
                || self.branch_forward(s, &branches[1], heads),
            )
        } else {
            (
                self.branch_forward(s, &branches[0], heads),
                self.branch_forward(s, &branches[1], heads),
            )
        };
        let a0 = scale_by_forward(&first.att, self.scalar(branches[0].alpha));
        let a1 = scale_by_forward(&second.att, self.scalar(branches[1].alpha));
        let data = a0.iter().zip(&a1).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(ss, data);
        let inputs = [
            s,
            branches[0].wq,
            branches[0].keys,
            branches[0].values,
            branches[0].wo,
            branches[0].alpha,
            branches[1].wq,
            branches[1].keys,
            branches[1].values,
            branches[1].wo,
            branches[1].alpha,
        ];
        self.push(
            out,
            Op::DualCrossAttention {
                s,
                branches,
                heads,
                parallel,
                saved: Box::new([first, second]),
            },
            OpKind::DualCrossAttention,
            &inputs,
        )
    }

    /// Squared Euclidean distances between rows: `a (m×d)`, `b (n×d)` → `m×n`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.cols {
            return Err(HlgtError::Dimension {
                op: "pairwise_sq_dist",
                lhs: dims(sa),
                rhs: dims(sb),
            });
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let d = sa.cols;
        let mut data = vec![F::zero(); sa.rows * sb.rows];
        for i in 0..sa.rows {
            for j in 0..sb.rows {
                let mut acc = F::zero();
                for c in 0..d {
                    let diff = xa[i * d + c] - xb[j * d + c];
                    acc += diff * diff;
                }
                data[i * sb.rows + j] = acc;
            }
        }
        let out = Tensor::from_parts(Shape::new(sa.rows, sb.rows), data);
        self.push(
            out,
            Op::PairwiseSqDist(a, b),
            OpKind::PairwiseSqDist,
            &[a, b],
        )
    }

    /// Pools groups of rows: `weights (p×g)`, `values ((p·g)×d)` → `p×d`,
    /// row `i` being `Σₛ weights[i,s]·values[i·g+s]`.
    pub fn group_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (sw, sv) = (self.shape(weights), self.shape(values));
        if sw.rows * sw.cols != sv.rows {
            return Err(HlgtError::Dimension {
                op: "group_weighted_sum",
                lhs: dims(sw),
                rhs: dims(sv),
            });
        }
        let (w, v) = (self.value(weights).data(), self.value(values).data());
        let (p, g, d) = (sw.rows, sw.cols, sv.cols);
        let mut data = vec![F::zero(); p * d];
        for i in 0..p {
            let orow = &mut data[i * d..(i + 1) * d];
            for s in 0..g {
                let wis = w[i * g + s];
                let vrow = &v[(i * g + s) * d..(i * g + s + 1) * d];
                for (o, &x) in orow.iter_mut().zip(vrow) {
                    *o += wis * x;
                }
            }
        }
        let out = Tensor::from_parts(Shape::new(p, d), data);
        self.push(
            out,
            Op::GroupWeightedSum(weights, values),
            OpKind::GroupWeightedSum,
            &[weights, values],
        )
    }

    /// Row `r` of the output is row `r + k` of the input, zero past the end.
    pub fn shift_rows_up(&mut self, a: Var, k: usize) -> Result<Var> {
        let s = self.shape(a);
        let x = self.value(a).data();
        let mut data = vec![F::zero(); s.len()];
        if k < s.rows {
            let n = (s.rows - k) * s.cols;
            data[..n].copy_from_slice(&x[k * s.cols..]);
        }
        let out = Tensor::from_parts(s, data);
        self.push(out, Op::ShiftRowsUp(a, k), OpKind::ShiftRowsUp, &[a])
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across
    /// multiple uses of a value; a second call requires [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(HlgtError::Backward(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        if self.shape(loss) != Shape::scalar() {
            return Err(HlgtError::Backward(format!(
                "loss must be a 1x1 scalar, got {}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(HlgtError::Backward(
                "loss is detached from every gradient-requiring tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            if let Some(fault) = self.fault {
                if fault.kind == self.nodes[idx].kind {
                    let f = F::of(fault.factor);
                    for x in &mut g {
                        *x *= f;
                    }
                }
            }
            self.backprop(idx, &g, &mut grads);
            if !g.iter().all(|x| x.is_finite()) {
                let node = &self.nodes[idx];
                return Err(HlgtError::NonFinite {
                    op: node.kind.name(),
                    scope: format!("{} (gradient)", node.scope),
                    node: idx,
                });
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], v: Var, contrib: Vec<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    /// Gradient contributions of one fused branch, in accumulation order.
    fn branch_grads(
        &self,
        g: &[F],
        s: Var,
        b: &CrossBranch,
        saved: &BranchSaved<F>,
        heads: usize,
    ) -> Vec<(Var, Vec<F>)> {
        let ss = self.shape(s);
        let (m, d) = (ss.rows, ss.cols);
        let l = self.shape(b.keys).rows;
        let mut out = Vec::with_capacity(6);
        let (datt, dalpha) = scale_by_backward(g, &saved.att, self.scalar(b.alpha));
        out.push((b.alpha, vec![dalpha]));
        let dheads = kernels::matmul_bt(&datt, self.data(b.wo), m, d, d);
        if self.needs(b.wo) {
            out.push((b.wo, kernels::matmul_at(&saved.heads_out, &datt, m, d, d)));
        }
        let (dq, dk, dv) = kernels::attention_backward(
            &dheads,
            &saved.q,
            self.data(b.keys),
            self.data(b.values),
            &saved.attn,
            m,
            l,
            d,
            heads,
            attention_scale::<F>(d, heads),
            None,
        );
        out.push((b.keys, dk));
        out.push((b.values, dv));
        if self.needs(s) {
            out.push((s, kernels::matmul_bt(&dq, self.data(b.wq), m, d, d)));
        }
        if self.needs(b.wq) {
            out.push((b.wq, kernels::matmul_at(self.data(s), &dq, m, d, d)));
        }
        out
    }

    fn backprop(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                if self.needs(*a) {
                    let da = kernels::matmul_bt(g, self.data(*b), sa.rows, sb.cols, sb.rows);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = kernels::matmul_at(self.data(*a), g, sa.rows, sa.cols, sb.cols);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let mut da = vec![F::zero(); s.len()];
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        da[r * s.cols + c] = g[c * s.rows + r];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(xb).map(|(&g, &y)| g * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(xa).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(xb).map(|(&g, &y)| g / y).collect());
                }
                if self.needs(*b) {
                    let db = g
                        .iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let is_max = matches!(node.op, Op::Maximum(..));
                let (xa, xb) = (self.data(*a), self.data(*b));
                let pick_a: Vec<bool> = xa
                    .iter()
                    .zip(xb)
                    .map(|(&x, &y)| if is_max { x >= y } else { x <= y })
                    .collect();
                let da = g
                    .iter()
                    .zip(&pick_a)
                    .map(|(&g, &p)| if p { g } else { F::zero() })
                    .collect();
                let db = g
                    .iter()
                    .zip(&pick_a)
                    .map(|(&g, &p)| if p { F::zero() } else { g })
                    .collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.needs(*bias) {
                    let cols = self.shape(*bias).cols;
                    self.accumulate(grads, *bias, column_sums(g, cols));
                }
            }
            Op::BroadcastRows(a) => {
                let cols = self.shape(*a).cols;
                self.accumulate(grads, *a, column_sums(g, cols));
            }
            Op::ScaleBy(a, s) => {
                let (da, ds) = scale_by_backward(g, self.data(*a), self.scalar(*s));
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *s, vec![ds]);
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *c).collect());
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Unary(a, kind) => {
                let x = self.data(*a);
                let da = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            OpKind::Gelu => kernels::gelu_grad(x),
                            OpKind::Tanh => F::one() - y * y,
                            OpKind::Exp => y,
                            OpKind::Sigmoid => y * (F::one() - y),
                            OpKind::Sqrt => F::of(0.5) / y,
                            OpKind::Abs => x.signum(),
                            OpKind::Square => F::of(2.0) * x,
                            OpKind::Clamp01 => {
                                if x >= F::zero() && x <= F::one() {
                                    F::one()
                                } else {
                                    F::zero()
                                }
                            }
                            other => unreachable!("{} is not unary", other.name()),
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let s = self.shape(*a);
                let da = kernels::softmax_rows_backward(y, g, s.rows, s.cols);
                self.accumulate(grads, *a, da);
            }
            Op::ConcatCols(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let w = sa.cols + sb.cols;
                let mut da = Vec::with_capacity(sa.len());
                let mut db = Vec::with_capacity(sb.len());
                for r in 0..sa.rows {
                    da.extend_from_slice(&g[r * w..r * w + sa.cols]);
                    db.extend_from_slice(&g[r * w + sa.cols..(r + 1) * w]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p).len();
                    self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let s = self.shape(*a);
                let w = node.value.cols();
                let mut da = vec![F::zero(); s.len()];
                for r in 0..s.rows {
                    da[r * s.cols + start..r * s.cols + start + w]
                        .copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *a, da);
            }
            Op::GatherRows(a, indices) => {
                let s = self.shape(*a);
                let mut da = vec![F::zero(); s.len()];
                for (i, &r) in indices.iter().enumerate() {
                    for c in 0..s.cols {
                        da[r * s.cols + c] += g[i * s.cols + c];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::SumAll(a) => {
                let n = self.shape(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let inv = F::one() / F::of(s.rows as f64);
                let da = (0..s.rows)
                    .flat_map(|_| g.iter().map(|&x| x * inv))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::RowSums(a) => {
                let s = self.shape(*a);
                let da = (0..s.rows)
                    .flat_map(|r| std::iter::repeat_n(g[r], s.cols))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv,
            } => {
                let s = self.shape(*x);
                let (dx, dg, db) =
                    kernels::layer_norm_backward(g, xhat, inv, self.data(*gain), s.rows, s.cols);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dg);
                self.accumulate(grads, *bias, db);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                ranges,
                saved,
            } => {
                let (sq, sk) = (self.shape(*q), self.shape(*k));
                let (dq, dk, dv) = kernels::attention_backward(
                    g,
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    saved,
                    sq.rows,
                    sk.rows,
                    sq.cols,
                    *heads,
                    *scale,
                    ranges.as_deref(),
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::DualCrossAttention {
                s,
                branches,
                heads,
                parallel,
                saved,
            } => {
                let run = |k: usize| self.branch_grads(g, *s, &branches[k], &saved[k], *heads);
                let (first, second) = if *parallel && rayon::current_num_threads() > 1 {
                    rayon::join(|| run(0), || run(1))
                } else {
                    (run(0), run(1))
                };
                // Same accumulation order as the reverse sweep over the
                // unfused graph: second branch first.
                for (v, contrib) in second.into_iter().chain(first) {
                    self.accumulate(grads, v, contrib);
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (xa, xb) = (self.data(*a), self.data(*b));
                let d = sa.cols;
                let mut da = vec![F::zero(); sa.len()];
                let mut db = vec![F::zero(); sb.len()];
                let two = F::of(2.0);
                for i in 0..sa.rows {
                    for j in 0..sb.rows {
                        let gij = g[i * sb.rows + j] * two;
                        for c in 0..d {
                            let diff = xa[i * d + c] - xb[j * d + c];
                            da[i * d + c] += gij * diff;
                            db[j * d + c] -= gij * diff;
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::GroupWeightedSum(w, v) => {
                let (sw, sv) = (self.shape(*w), self.shape(*v));
                let (p, gs, d) = (sw.rows, sw.cols, sv.cols);
                let (xw, xv) = (self.data(*w), self.data(*v));
                let mut dw = vec![F::zero(); sw.len()];
                let mut dv = vec![F::zero(); sv.len()];
                for i in 0..p {
                    let gi = &g[i * d..(i + 1) * d];
                    for s in 0..gs {
                        let r = i * gs + s;
                        dw[i * gs + s] = kernels::dot(gi, &xv[r * d..(r + 1) * d]);
                        let wis = xw[i * gs + s];
                        for (o, &gv) in dv[r * d..(r + 1) * d].iter_mut().zip(gi) {
                            *o = wis * gv;
                        }
                    }
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *v, dv);
            }
            Op::ShiftRowsUp(a, k) => {
                let s = self.shape(*a);
                let mut da = vec![F::zero(); s.len()];
                if *k < s.rows {
                    let n = (s.rows - k) * s.cols;
                    da[k * s.cols..].copy_from_slice(&g[..n]);
                }
                self.accumulate(grads, *a, da);
            }
        }
    }
}

fn column_sums<F: Real>(g: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cols];
    for row in g.chunks(cols) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    out
}
