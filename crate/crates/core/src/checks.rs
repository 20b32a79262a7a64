//! Gradient-check suites over primitive ops, blocks, encoder, decoder,
//! losses and the full model, on small deterministic instances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{AttentionParams, BlockLayout, Ffn, FusionParams, ParamBuilder, TrmParams};
use crate::decoder::{cmcc_loss, CmccMode};
use crate::error::{HlgtError, Result};
use crate::head::{final_loss_tape, head_forward, GroundTruth, HeadParams, LossWeights};
use crate::model::{Model, ModelConfig};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{grad_check, CrossBranch, Fault, GradCheckReport, KeyRange, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Blocks,
    Encoder,
    Decoder,
    Losses,
    Full,
}

impl Scope {
    pub const ALL: [Scope; 6] = [
        Scope::Ops,
        Scope::Blocks,
        Scope::Encoder,
        Scope::Decoder,
        Scope::Losses,
        Scope::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Blocks => "blocks",
            Scope::Encoder => "encoder",
            Scope::Decoder => "decoder",
            Scope::Losses => "losses",
            Scope::Full => "full",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = HlgtError;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HlgtError::InvalidArgument(format!("unknown gradcheck scope `{s}`")))
    }
}

type LossFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One named function of named parameters.
pub struct CheckCase {
    pub name: String,
    pub params: Vec<(String, Tensor<f64>)>,
    loss: LossFn,
}

impl CheckCase {
    fn new(
        name: impl Into<String>,
        params: Vec<(String, Tensor<f64>)>,
        loss: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        CheckCase {
            name: name.into(),
            params,
            loss: Box::new(loss),
        }
    }

    pub fn run(&self, h: f64, tol: f64, fault: Option<Fault>) -> Result<GradCheckReport> {
        grad_check(&self.loss, &self.params, h, tol, fault)
    }
}

pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{status} {} max_rel_err={:.3e}",
            self.name,
            self.report.max_error()
        );
        for f in self.report.failures() {
            s.push_str(&format!(
                "\n     {}: rel_err={:.3e} index={} analytic={:.6e} numeric={:.6e}",
                f.name, f.max_rel_error, f.worst_index, f.analytic, f.numeric
            ));
        }
        s
    }
}

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

pub fn run_scope(scope: Scope, h: f64, tol: f64, fault: Option<Fault>) -> Result<Vec<CaseResult>> {
    cases(scope)?
        .into_iter()
        .map(|c| {
            Ok(CaseResult {
                report: c.run(h, tol, fault)?,
                name: format!("{scope}/{}", c.name),
            })
        })
        .collect()
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    fn t(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| self.0.random_range(lo..hi))
            .collect();
        Tensor::from_f64(rows, cols, &data).expect("positive extents")
    }

    /// Entries with magnitude in `[0.2, 1.5]` and random sign.
    fn away_from_zero(&mut self, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let m = self.0.random_range(0.2..1.5);
                if self.0.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::from_f64(rows, cols, &data).expect("positive extents")
    }
}

/// `Σ out ⊙ W` with a fixed non-uniform `W`, so every output entry matters.
fn probe(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let s = tape.shape(v);
    let w: Vec<f64> = (0..s.len()).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = tape.constant(Tensor::from_f64(s.rows, s.cols, &w)?)?;
    let m = tape.mul(v, w)?;
    tape.sum_all(m)
}

fn named(pairs: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn op_case(
    name: &str,
    params: Vec<(&str, Tensor<f64>)>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> CheckCase {
    CheckCase::new(name, named(params), move |tape, v| {
        let out = f(tape, v)?;
        probe(tape, out)
    })
}

fn op_cases() -> Vec<CheckCase> {
    let mut g = Gen::new(11);
    let mut out = vec![
        op_case(
            "matmul",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.t(3, 4, -1.0, 1.0))],
            |t, v| t.matmul(v[0], v[1]),
        ),
        op_case("transpose", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| {
            t.transpose(v[0])
        }),
        op_case(
            "add",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.t(2, 3, -1.0, 1.0))],
            |t, v| t.add(v[0], v[1]),
        ),
        op_case(
            "sub",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.t(2, 3, -1.0, 1.0))],
            |t, v| t.sub(v[0], v[1]),
        ),
        op_case(
            "mul",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.t(2, 3, -1.0, 1.0))],
            |t, v| t.mul(v[0], v[1]),
        ),
        op_case(
            "div",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.away_from_zero(2, 3))],
            |t, v| t.div(v[0], v[1]),
        ),
        op_case(
            "add_row_bias",
            vec![("a", g.t(3, 2, -1.0, 1.0)), ("b", g.t(1, 2, -1.0, 1.0))],
            |t, v| t.add_row_bias(v[0], v[1]),
        ),
        op_case(
            "broadcast_rows",
            vec![("a", g.t(1, 3, -1.0, 1.0))],
            |t, v| t.broadcast_rows(v[0], 4),
        ),
        op_case(
            "scale_by",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("s", g.t(1, 1, 0.2, 1.0))],
            |t, v| t.scale_by(v[0], v[1]),
        ),
        op_case("scale", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| {
            t.scale(v[0], -1.7)
        }),
        op_case("add_const", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| {
            t.add_const(v[0], 0.3)
        }),
        op_case("gelu", vec![("a", g.t(2, 3, -2.0, 2.0))], |t, v| {
            t.gelu(v[0])
        }),
        op_case("tanh", vec![("a", g.t(2, 3, -2.0, 2.0))], |t, v| {
            t.tanh(v[0])
        }),
        op_case("exp", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| t.exp(v[0])),
        op_case("sigmoid", vec![("a", g.t(2, 3, -2.0, 2.0))], |t, v| {
            t.sigmoid(v[0])
        }),
        op_case("sqrt", vec![("a", g.t(2, 3, 0.3, 2.0))], |t, v| {
            t.sqrt(v[0])
        }),
        op_case("abs", vec![("a", g.away_from_zero(2, 3))], |t, v| {
            t.abs(v[0])
        }),
        op_case("square", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| {
            t.square(v[0])
        }),
        op_case(
            "clamp01",
            vec![(
                "a",
                Tensor::from_f64(2, 3, &[-0.4, 0.2, 0.55, 0.93, 1.3, 0.07]).expect("2x3"),
            )],
            |t, v| t.clamp01(v[0]),
        ),
        op_case(
            "maximum",
            vec![
                (
                    "a",
                    Tensor::from_f64(1, 4, &[0.1, 0.9, -0.3, 0.5]).expect("1x4"),
                ),
                (
                    "b",
                    Tensor::from_f64(1, 4, &[0.6, 0.2, -0.8, 0.1]).expect("1x4"),
                ),
            ],
            |t, v| t.maximum(v[0], v[1]),
        ),
        op_case(
            "minimum",
            vec![
                (
                    "a",
                    Tensor::from_f64(1, 4, &[0.1, 0.9, -0.3, 0.5]).expect("1x4"),
                ),
                (
                    "b",
                    Tensor::from_f64(1, 4, &[0.6, 0.2, -0.8, 0.1]).expect("1x4"),
                ),
            ],
            |t, v| t.minimum(v[0], v[1]),
        ),
        op_case("softmax_rows", vec![("a", g.t(3, 4, -2.0, 2.0))], |t, v| {
            t.softmax_rows(v[0])
        }),
        op_case(
            "softmax_rows_ranged",
            vec![("a", g.t(2, 4, -2.0, 2.0))],
            |t, v| t.softmax_rows_ranged(v[0], &[KeyRange::new(0, 3), KeyRange::new(1, 4)]),
        ),
        op_case(
            "concat_cols",
            vec![("a", g.t(2, 2, -1.0, 1.0)), ("b", g.t(2, 3, -1.0, 1.0))],
            |t, v| t.concat_cols(v[0], v[1]),
        ),
        op_case(
            "concat_rows",
            vec![("a", g.t(1, 3, -1.0, 1.0)), ("b", g.t(2, 3, -1.0, 1.0))],
            |t, v| t.concat_rows(&[v[0], v[1], v[0]]),
        ),
        op_case("slice_cols", vec![("a", g.t(2, 5, -1.0, 1.0))], |t, v| {
            t.slice_cols(v[0], 1, 3)
        }),
        op_case("gather_rows", vec![("a", g.t(3, 2, -1.0, 1.0))], |t, v| {
            t.gather_rows(v[0], &[2, 0, 2, 1])
        }),
        op_case("reshape", vec![("a", g.t(2, 6, -1.0, 1.0))], |t, v| {
            t.reshape(v[0], 3, 4)
        }),
        op_case("sum_all", vec![("a", g.t(2, 3, -1.0, 1.0))], |t, v| {
            t.sum_all(v[0])
        }),
        op_case("mean_rows", vec![("a", g.t(3, 2, -1.0, 1.0))], |t, v| {
            t.mean_rows(v[0])
        }),
        op_case("row_sums", vec![("a", g.t(3, 2, -1.0, 1.0))], |t, v| {
            t.row_sums(v[0])
        }),
        op_case(
            "layer_norm",
            vec![
                ("x", g.t(3, 4, -1.0, 1.0)),
                ("gain", g.t(1, 4, 0.5, 1.5)),
                ("bias", g.t(1, 4, -0.5, 0.5)),
            ],
            |t, v| t.layer_norm(v[0], v[1], v[2]),
        ),
        op_case(
            "attention",
            vec![
                ("q", g.t(2, 4, -1.0, 1.0)),
                ("k", g.t(3, 4, -1.0, 1.0)),
                ("v", g.t(3, 4, -1.0, 1.0)),
            ],
            |t, v| t.attention(v[0], v[1], v[2], 2, None),
        ),
        op_case(
            "attention_ranged",
            vec![
                ("q", g.t(4, 4, -1.0, 1.0)),
                ("k", g.t(4, 4, -1.0, 1.0)),
                ("v", g.t(4, 4, -1.0, 1.0)),
            ],
            |t, v| {
                let r = vec![
                    KeyRange::new(0, 2),
                    KeyRange::new(0, 2),
                    KeyRange::new(2, 4),
                    KeyRange::new(2, 3),
                ];
                t.attention(v[0], v[1], v[2], 2, Some(r))
            },
        ),
        op_case(
            "pairwise_sq_dist",
            vec![("a", g.t(2, 3, -1.0, 1.0)), ("b", g.t(4, 3, -1.0, 1.0))],
            |t, v| t.pairwise_sq_dist(v[0], v[1]),
        ),
        op_case(
            "group_weighted_sum",
            vec![("w", g.t(2, 3, -1.0, 1.0)), ("v", g.t(6, 2, -1.0, 1.0))],
            |t, v| t.group_weighted_sum(v[0], v[1]),
        ),
        op_case(
            "shift_rows_up",
            vec![("a", g.t(4, 2, -1.0, 1.0))],
            |t, v| t.shift_rows_up(v[0], 2),
        ),
    ];
    let dual = |parallel: bool, g: &mut Gen| {
        op_case(
            if parallel {
                "dual_cross_attention"
            } else {
                "dual_cross_attention_serial"
            },
            vec![
                ("s", g.t(2, 4, -1.0, 1.0)),
                ("wq0", g.t(4, 4, -1.0, 1.0)),
                ("k0", g.t(3, 4, -1.0, 1.0)),
                ("v0", g.t(3, 4, -1.0, 1.0)),
                ("wo0", g.t(4, 4, -1.0, 1.0)),
                ("a0", g.t(1, 1, 0.2, 1.0)),
                ("wq1", g.t(4, 4, -1.0, 1.0)),
                ("k1", g.t(2, 4, -1.0, 1.0)),
                ("v1", g.t(2, 4, -1.0, 1.0)),
                ("wo1", g.t(4, 4, -1.0, 1.0)),
                ("a1", g.t(1, 1, 0.2, 1.0)),
            ],
            move |t, v| {
                let b = |i: usize| CrossBranch {
                    wq: v[i],
                    keys: v[i + 1],
                    values: v[i + 2],
                    wo: v[i + 3],
                    alpha: v[i + 4],
                };
                t.dual_cross_attention(v[0], [b(1), b(6)], 2, parallel)
            },
        )
    };
    out.push(dual(true, &mut g));
    out.push(dual(false, &mut g));
    out
}

fn store<T>(seed: u64, f: impl FnOnce(&mut ParamBuilder) -> T) -> (T, ParamStore<f64>) {
    let mut s = ParamStore::new();
    let mut init = Initializer::new(seed);
    let out = f(&mut ParamBuilder::new(&mut s, &mut init));
    (out, s.cast())
}

/// Moves every bias, gain and scalar away from its neutral initial value so
/// the check exercises them with generic values.
fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut g = Gen::new(seed);
    for t in store.tensors_mut() {
        let noise = g.t(t.rows(), t.cols(), -0.2, 0.2);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
}

fn block_cases() -> Vec<CheckCase> {
    let mut g = Gen::new(23);
    let mut out = Vec::new();

    let (ffn, mut s) = store(1, |pb| Ffn::new(pb, "ffn", 3));
    jitter(&mut s, 2);
    let x = g.t(2, 3, -1.0, 1.0);
    out.push(CheckCase::new("ffn", s.named(), move |tape, v| {
        let bind = s.binding_from_vars(v)?;
        let x = tape.constant(x.clone())?;
        let y = ffn.forward(tape, &bind, x)?;
        probe(tape, y)
    }));

    let (trm, mut s) = store(3, |pb| TrmParams::new(pb, "trm", 4, 2));
    jitter(&mut s, 4);
    let x = g.t(4, 4, -1.0, 1.0);
    out.push(CheckCase::new("trm", s.named(), move |tape, v| {
        let bind = s.binding_from_vars(v)?;
        let x = tape.constant(x.clone())?;
        let layout = BlockLayout {
            block_len: 2,
            indices: vec![0, 1, 2, 3],
            valid: vec![2, 1],
        };
        let y = trm.forward(tape, &bind, x, Some(layout.key_ranges()))?;
        probe(tape, y)
    }));

    let (mha, mut s) = store(5, |pb| AttentionParams::new(pb, "mha", 4, 2));
    jitter(&mut s, 6);
    let (q, kv) = (g.t(2, 4, -1.0, 1.0), g.t(3, 4, -1.0, 1.0));
    out.push(CheckCase::new(
        "multi_head_attention",
        s.named(),
        move |tape, v| {
            let bind = s.binding_from_vars(v)?;
            let q = tape.constant(q.clone())?;
            let kv = tape.constant(kv.clone())?;
            let y = mha.attend(tape, &bind, q, kv, kv, None)?;
            probe(tape, y)
        },
    ));

    let (fusion, mut s) = store(7, |pb| FusionParams::new(pb, "fusion", 3, 4));
    jitter(&mut s, 8);
    let z = g.t(6, 3, -1.0, 1.0);
    out.push(CheckCase::new(
        "attention_fusion",
        s.named(),
        move |tape, v| {
            let bind = s.binding_from_vars(v)?;
            let z = tape.constant(z.clone())?;
            let layout = BlockLayout {
                block_len: 3,
                indices: (0..6).collect(),
                valid: vec![3, 2],
            };
            let (y, _) = fusion.pool(tape, &bind, z, &layout)?;
            probe(tape, y)
        },
    ));
    out
}

/// The toy instance: 2 clips × 2 frames, 2 phrases × 2 words, `D = 4`,
/// `M = 2`.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        video_dim: 4,
        query_dim: 4,
        dim: 4,
        heads: 2,
        slots: 2,
        clip_len: 2,
        clip_overlap: 0,
        phrases: 2,
        fusion_hidden: 4,
        max_frames: 4,
        ..ModelConfig::default()
    }
}

pub struct ToyInstance {
    pub model: Model,
    pub params: ParamStore<f64>,
    pub video: Tensor<f64>,
    pub query: Tensor<f64>,
    pub gt: GroundTruth,
}

pub fn toy_instance(config: ModelConfig) -> Result<ToyInstance> {
    let model = Model::new(config, 5)?;
    let mut params = model.params.cast::<f64>();
    jitter(&mut params, 9);
    let mut g = Gen::new(31);
    Ok(ToyInstance {
        video: g.t(4, model.config.video_dim, -1.0, 1.0),
        query: g.t(4, model.config.query_dim, -1.0, 1.0),
        gt: GroundTruth::from_seconds(1.0, 2.6, 4.0)?,
        model,
        params,
    })
}

fn model_case(
    name: &str,
    config: ModelConfig,
    which: fn(&mut Tape<f64>, &crate::model::ForwardVars) -> Result<Var>,
) -> Result<CheckCase> {
    let toy = toy_instance(config)?;
    let named = toy.params.named();
    Ok(CheckCase::new(name, named, move |tape, v| {
        let bind = toy.params.binding_from_vars(v)?;
        let fwd = toy.model.forward(tape, &bind, &toy.video, &toy.query)?;
        which(tape, &fwd)
    }))
}

fn encoder_cases() -> Result<Vec<CheckCase>> {
    Ok(vec![
        model_case("video_tokens", toy_config(), |t, f| {
            probe(t, f.video_tokens)
        })?,
        model_case("query_tokens", toy_config(), |t, f| {
            probe(t, f.query_tokens)
        })?,
    ])
}

fn decoder_cases() -> Result<Vec<CheckCase>> {
    let mut g = Gen::new(41);
    let (clips, phrases) = (g.t(3, 4, -1.0, 1.0), g.t(2, 4, -1.0, 1.0));
    let cmcc = CheckCase::new(
        "cmcc",
        named(vec![("clips", clips), ("phrases", phrases)]),
        |t, v| cmcc_loss(t, v[0], v[1], CmccMode::Distribution),
    );
    Ok(vec![
        model_case("o_cross", toy_config(), |t, f| probe(t, f.o_cross))?,
        model_case(
            "o_cross_sequential",
            ModelConfig {
                branch_mode: crate::decoder::BranchMode::Sequential,
                ..toy_config()
            },
            |t, f| probe(t, f.o_cross),
        )?,
        cmcc,
    ])
}

fn loss_cases() -> Result<Vec<CheckCase>> {
    let (head, mut s) = store(13, |pb| HeadParams::new(pb, "head", 4));
    jitter(&mut s, 14);
    let mut g = Gen::new(51);
    let mut named_params = s.named();
    named_params.push(("o_cross".into(), g.t(3, 4, -1.0, 1.0)));
    let gt = GroundTruth::from_seconds(2.0, 7.0, 10.0)?;
    let w = LossWeights::default();
    let n = s.len();
    Ok(vec![CheckCase::new(
        "final_loss",
        named_params,
        move |tape, v| {
            let bind = s.binding_from_vars(&v[..n])?;
            let hv = head_forward(tape, &bind, &head, v[n])?;
            let cmcc = tape.constant(Tensor::scalar(0.4))?;
            Ok(final_loss_tape(tape, &hv, Some(cmcc), &gt, &w)?.0)
        },
    )])
}

fn full_cases() -> Result<Vec<CheckCase>> {
    let toy = toy_instance(toy_config())?;
    let named = toy.params.named();
    let w = LossWeights::default();
    Ok(vec![CheckCase::new("loss", named, move |tape, v| {
        let bind = toy.params.binding_from_vars(v)?;
        Ok(toy
            .model
            .sample_loss(tape, &bind, &toy.video, &toy.query, &toy.gt, &w)?
            .0)
    })])
}

pub fn cases(scope: Scope) -> Result<Vec<CheckCase>> {
    match scope {
        Scope::Ops => Ok(op_cases()),
        Scope::Blocks => Ok(block_cases()),
        Scope::Encoder => encoder_cases(),
        Scope::Decoder => decoder_cases(),
        Scope::Losses => loss_cases(),
        Scope::Full => full_cases(),
    }
}
