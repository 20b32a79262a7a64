//! The full grounding network: input projections, hierarchical encoders,
//! cross-modal decoder and boundary head.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::blocks::{Linear, ParamBuilder, PositionalEncoding};
use crate::data::{downsample_uniform, SampleRecord};
use crate::decoder::{
    cmcc_loss, enhance_segment_queries, parallel_cross_attention, project_modality_kv, BranchMode,
    CmccMode, DecoderParams,
};
use crate::encoder::{
    encode_local, encode_modality, phrase_spans, split_clips, EncodedModality, ModalityEncoder,
    PhraseConv,
};
use crate::error::{HlgtError, Result};
use crate::head::{
    final_loss_tape, head_forward, read_predictions, GroundTruth, HeadParams, HeadVars,
    LossBreakdown, LossWeights, SegmentPrediction,
};
use crate::params::{Binding, Initializer, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Architecture ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Global branch removed: tokens come from the local transformer only.
    LocalOnly,
    /// No hierarchy: projected frames and words (plus positional encodings)
    /// go straight to the decoder; no cycle-consistency loss.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub video_dim: usize,
    pub query_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub slots: usize,
    pub clip_len: usize,
    pub clip_overlap: usize,
    pub phrases: usize,
    pub fusion_hidden: usize,
    /// Videos longer than this are uniformly downsampled.
    pub max_frames: usize,
    pub positional_encoding: bool,
    pub variant: Variant,
    pub cmcc: CmccMode,
    pub branch_mode: BranchMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            video_dim: 32,
            query_dim: 32,
            dim: 32,
            heads: 4,
            slots: 10,
            clip_len: 4,
            clip_overlap: 0,
            phrases: 3,
            fusion_hidden: 32,
            max_frames: 64,
            positional_encoding: true,
            variant: Variant::Full,
            cmcc: CmccMode::Distribution,
            branch_mode: BranchMode::Parallel,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HlgtError::Config(format!("model: {m}")));
        if self.video_dim == 0 || self.query_dim == 0 || self.dim == 0 || self.fusion_hidden == 0 {
            return bad("feature dimensions must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if !self.dim.is_multiple_of(2) {
            return bad(format!(
                "dim {} must be even for positional encodings",
                self.dim
            ));
        }
        if self.slots == 0 || self.phrases == 0 || self.max_frames == 0 {
            return bad("slots, phrases and max_frames must be positive".into());
        }
        if self.clip_len == 0 || self.clip_overlap >= self.clip_len {
            return bad(format!(
                "clip_overlap {} must be smaller than clip_len {}",
                self.clip_overlap, self.clip_len
            ));
        }
        Ok(())
    }
}

/// Parameter handles of every component.
#[derive(Debug, Clone)]
pub struct Network {
    pub video_in: Linear,
    pub query_in: Linear,
    pub video_enc: ModalityEncoder,
    pub query_enc: ModalityEncoder,
    pub phrase_conv: PhraseConv,
    pub decoder: DecoderParams,
    pub head: HeadParams,
}

impl Network {
    pub fn build(cfg: &ModelConfig, pb: &mut ParamBuilder) -> Self {
        let d = cfg.dim;
        Network {
            video_in: Linear::new(pb, "video_in", cfg.video_dim, d),
            query_in: Linear::new(pb, "query_in", cfg.query_dim, d),
            video_enc: ModalityEncoder::new(pb, "video_enc", d, cfg.heads, cfg.fusion_hidden),
            query_enc: ModalityEncoder::new(pb, "query_enc", d, cfg.heads, cfg.fusion_hidden),
            phrase_conv: PhraseConv::new(pb, "phrase_conv", d),
            decoder: DecoderParams::new(pb, "decoder", d, cfg.heads, cfg.slots),
            head: HeadParams::new(pb, "head", d),
        }
    }
}

/// Tape outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub head: HeadVars,
    pub cmcc: Option<Var>,
    /// `P_v×D` video tokens handed to the decoder.
    pub video_tokens: Var,
    /// `P_q×D` query tokens handed to the decoder.
    pub query_tokens: Var,
    pub o_cross: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub net: Network,
    pub params: ParamStore<f32>,
    pe: PositionalEncoding,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let net = Network::build(&config, &mut ParamBuilder::new(&mut params, &mut init));
        let pe = PositionalEncoding::new(config.dim, config.max_frames.max(512))?;
        Ok(Model {
            config,
            net,
            params,
            pe,
        })
    }

    pub fn check_inputs(&self, video: (usize, usize), query: (usize, usize)) -> Result<()> {
        if video.1 != self.config.video_dim {
            return Err(HlgtError::Dimension {
                op: "video features",
                lhs: vec![video.0, video.1],
                rhs: vec![self.config.video_dim],
            });
        }
        if query.1 != self.config.query_dim {
            return Err(HlgtError::Dimension {
                op: "query features",
                lhs: vec![query.0, query.1],
                rhs: vec![self.config.query_dim],
            });
        }
        if video.0 > self.pe.max_len() || query.0 > self.pe.max_len() {
            return Err(HlgtError::OutOfRange {
                index: video.0.max(query.0),
                limit: self.pe.max_len(),
            });
        }
        if self.config.variant != Variant::Flat && query.0 < self.config.phrases {
            return Err(HlgtError::InvalidArgument(format!(
                "query has {} words but the model uses {} phrases",
                query.0, self.config.phrases
            )));
        }
        Ok(())
    }

    /// Forward pass given any parameter binding (`f32` for training, `f64`
    /// for gradient checks).
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        video: &Tensor<F>,
        query: &Tensor<F>,
    ) -> Result<ForwardVars> {
        self.check_inputs((video.rows(), video.cols()), (query.rows(), query.cols()))?;
        let cfg = &self.config;
        let net = &self.net;
        let pe = cfg.positional_encoding.then_some(&self.pe);

        let (video_tokens, query_tokens, cmcc) = tape.scoped("encoder", |tape| -> Result<_> {
            let v = tape.constant(video.clone())?;
            let q = tape.constant(query.clone())?;
            let v = net.video_in.forward(tape, bind, v)?;
            let q = net.query_in.forward(tape, bind, q)?;
            match cfg.variant {
                Variant::Flat => {
                    let (v, q) = match pe {
                        Some(pe) => {
                            let pv = tape.constant(pe.rows(video.rows())?)?;
                            let pq = tape.constant(pe.rows(query.rows())?)?;
                            (tape.add(v, pv)?, tape.add(q, pq)?)
                        }
                        None => (v, q),
                    };
                    Ok((v, q, None))
                }
                Variant::Full | Variant::LocalOnly => {
                    let clips = split_clips(video.rows(), cfg.clip_len, cfg.clip_overlap)?.layout();
                    let phrases = phrase_spans(query.rows(), cfg.phrases)?.layout();
                    let conv = net.phrase_conv.forward(tape, bind, q)?;
                    let (ev, eq) = if cfg.variant == Variant::Full {
                        (
                            encode_modality(tape, bind, &net.video_enc, v, v, &clips, pe)?,
                            encode_modality(tape, bind, &net.query_enc, conv, q, &phrases, pe)?,
                        )
                    } else {
                        (
                            self.encode_local_only(tape, bind, &net.video_enc, v, &clips, pe)?,
                            self.encode_local_only(tape, bind, &net.query_enc, conv, &phrases, pe)?,
                        )
                    };
                    let cmcc = tape.scoped("losses", |tape| {
                        cmcc_loss(tape, ev.locals, eq.locals, cfg.cmcc)
                    })?;
                    Ok((ev.tokens, eq.tokens, Some(cmcc)))
                }
            }
        })?;

        let o_cross = tape.scoped("decoder", |tape| -> Result<Var> {
            let sbar = enhance_segment_queries(tape, bind, &net.decoder)?;
            let kv_v = project_modality_kv(tape, bind, &net.decoder.video, video_tokens)?;
            let kv_q = project_modality_kv(tape, bind, &net.decoder.query, query_tokens)?;
            parallel_cross_attention(tape, bind, &net.decoder, sbar, kv_v, kv_q, cfg.branch_mode)
        })?;
        let head = tape.scoped("head", |tape| head_forward(tape, bind, &net.head, o_cross))?;
        Ok(ForwardVars {
            head,
            cmcc,
            video_tokens,
            query_tokens,
            o_cross,
        })
    }

    fn encode_local_only<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        enc: &ModalityEncoder,
        tokens: Var,
        layout: &crate::blocks::BlockLayout,
        pe: Option<&PositionalEncoding>,
    ) -> Result<EncodedModality> {
        let locals = encode_local(tape, bind, enc, tokens, layout)?;
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
        let zeros = tape.constant(Tensor::zeros(rows, self.config.dim))?;
        let joined = tape.concat_cols(local_tokens, zeros)?;
        let out = enc.assemble.forward(tape, bind, joined)?;
        Ok(EncodedModality {
            tokens: out,
            pooled: local_summary,
            locals,
        })
    }

    /// Differentiable training objective of one sample.
    pub fn sample_loss<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        video: &Tensor<F>,
        query: &Tensor<F>,
        gt: &GroundTruth,
        weights: &LossWeights,
    ) -> Result<(Var, LossBreakdown)> {
        let fwd = self.forward(tape, bind, video, query)?;
        tape.scoped("losses", |tape| {
            final_loss_tape(tape, &fwd.head, fwd.cmcc, gt, weights)
        })
    }

    /// The video uniformly downsampled to at most `max_frames` rows.
    pub fn fit_frames<'a>(&self, video: &'a Tensor<f32>) -> Cow<'a, Tensor<f32>> {
        if video.rows() > self.config.max_frames {
            Cow::Owned(downsample_uniform(video, self.config.max_frames))
        } else {
            Cow::Borrowed(video)
        }
    }

    /// Slot predictions for one sample.
    pub fn predict(
        &self,
        video: &Tensor<f32>,
        query: &Tensor<f32>,
    ) -> Result<Vec<SegmentPrediction>> {
        let mut tape = Tape::<f32>::new();
        let bind = self.params.bind_constant(&mut tape)?;
        let video = self.fit_frames(video);
        let fwd = self.forward(&mut tape, &bind, &video, query)?;
        Ok(read_predictions(&tape, &fwd.head))
    }

    pub fn predict_sample(&self, sample: &SampleRecord) -> Result<Vec<SegmentPrediction>> {
        self.predict(&sample.video, &sample.query)
    }
}
