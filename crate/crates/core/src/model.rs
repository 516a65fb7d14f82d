//! The full model: uni-modal encoders, the bottleneck cross-modal encoder,
//! the text-conditioned query generator, the query decoder and four
//! per-clip prediction heads.

use serde::{Deserialize, Serialize};

use crate::attention::{
    compress, expand, self_attention, AttentionBlock, BottleneckTokens, FeedForward, LayerNorm, Linear, PositionalEncoding,
};
use crate::autograd::Var;
use crate::error::{Result, UmtError};
use crate::features_io::{FeatureSequence, VideoSample};
use crate::losses::{build_targets, focal_center_loss, regression_losses, saliency_loss, total_loss, LossVars, LossWeights};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::session::Session;
use crate::tensor::Tensor;

/// How the two expanded modality streams merge into one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Sum,
    Mean,
    /// Concatenate along features, then project back to `model_dim`.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub uni_layers: usize,
    pub cross_layers: usize,
    pub decoder_layers: usize,
    pub generator_layers: usize,
    pub bottleneck_tokens: usize,
    pub dropout: f64,
    pub pre_dropout_av: f64,
    pub pre_dropout_text: f64,
    pub use_visual: bool,
    pub use_audio: bool,
    pub use_text: bool,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub text_dim: usize,
    /// Rows in every positional table; longer sequences are rejected.
    pub max_len: usize,
    pub scaled_attention: bool,
    /// Pass the window head through softplus so durations stay positive.
    pub window_softplus: bool,
    /// Use one set of compression weights for both modalities.
    pub share_compress_weights: bool,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 256,
            heads: 8,
            uni_layers: 1,
            cross_layers: 1,
            decoder_layers: 3,
            generator_layers: 1,
            bottleneck_tokens: 4,
            dropout: 0.1,
            pre_dropout_av: 0.5,
            pre_dropout_text: 0.3,
            use_visual: true,
            use_audio: true,
            use_text: true,
            visual_dim: 2816,
            audio_dim: 2048,
            text_dim: 512,
            max_len: 512,
            scaled_attention: true,
            window_softplus: true,
            share_compress_weights: false,
            fusion: Fusion::Sum,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UmtError::Config(m));
        if !self.use_visual && !self.use_audio {
            return bad("at least one of use_visual/use_audio must be set".into());
        }
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!("model_dim {} must be a positive multiple of heads {}", self.model_dim, self.heads));
        }
        if self.bottleneck_tokens == 0 {
            return bad("bottleneck_tokens must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        for (name, r) in [
            ("dropout", self.dropout),
            ("pre_dropout_av", self.pre_dropout_av),
            ("pre_dropout_text", self.pre_dropout_text),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn two_modalities(&self) -> bool {
        self.use_visual && self.use_audio
    }
}

/// Per-clip head outputs as tape variables, each of shape `[N_v]`.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub saliency: Var,
    pub heatmap: Var,
    pub window: Var,
    pub offset: Var,
}

/// Per-clip head outputs as plain values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPredictions {
    pub saliency: Vec<f64>,
    pub heatmap: Vec<f64>,
    pub window: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: AttentionBlock,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct ModalityEncoder {
    proj: Linear,
    pos: PositionalEncoding,
    layers: Vec<EncoderLayer>,
    feature_dim: usize,
}

#[derive(Clone, Debug)]
struct CrossLayer {
    compress_visual: AttentionBlock,
    compress_audio: AttentionBlock,
    expand_visual: AttentionBlock,
    expand_audio: AttentionBlock,
    ffn_visual: FeedForward,
    ffn_audio: FeedForward,
}

#[derive(Clone, Debug)]
struct CrossEncoder {
    tokens: BottleneckTokens,
    pos: PositionalEncoding,
    layers: Vec<CrossLayer>,
    fusion_proj: Option<Linear>,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: AttentionBlock,
    cross_attn: AttentionBlock,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct Heads {
    saliency: Linear,
    center: Linear,
    window: Linear,
    offset: Linear,
}

/// Unified multi-modal transformer with its parameters.
#[derive(Clone, Debug)]
pub struct Umt {
    config: ModelConfig,
    params: ParamStore,
    visual: Option<ModalityEncoder>,
    audio: Option<ModalityEncoder>,
    cross: Option<CrossEncoder>,
    joint_norm: LayerNorm,
    text_proj: Option<Linear>,
    generator: Vec<AttentionBlock>,
    generator_pos: PositionalEncoding,
    decoder: Vec<DecoderLayer>,
    decoder_pos_q: PositionalEncoding,
    decoder_pos_k: PositionalEncoding,
    decoder_norm: LayerNorm,
    heads: Heads,
}

/// Initial heatmap logit: sigmoid(-2.19) ≈ 0.1.
const HEATMAP_PRIOR_LOGIT: f64 = -2.19;

impl Umt {
    /// Builds a freshly initialized model; initialization is a pure function
    /// of `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let d = c.model_dim;
        let rng = &mut rng;

        let modality = |p: &mut ParamStore, name: &str, dim: usize, rng: &mut RngState| -> Result<ModalityEncoder> {
            let proj = Linear::new(p, &format!("{name}.proj"), dim, d, true, rng);
            let pos = PositionalEncoding::new(p, &format!("{name}.pos"), c.max_len, d, c.dropout, rng);
            let layers = (0..c.uni_layers)
                .map(|l| {
                    Ok(EncoderLayer {
                        attn: AttentionBlock::new_prenorm(p, &format!("{name}.uni.{l}.self"), d, c.heads, false, c.dropout, rng)?,
                        ffn: FeedForward::new(p, &format!("{name}.uni.{l}.ffn"), d, c.dropout, true, rng),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ModalityEncoder {
                proj,
                pos,
                layers,
                feature_dim: dim,
            })
        };
        let visual = if c.use_visual { Some(modality(&mut p, "visual", c.visual_dim, rng)?) } else { None };
        let audio = if c.use_audio { Some(modality(&mut p, "audio", c.audio_dim, rng)?) } else { None };

        let cross = if c.two_modalities() {
            let tokens = BottleneckTokens::new(&mut p, "cross.tokens", c.bottleneck_tokens, d, rng)?;
            let pos = PositionalEncoding::new(&mut p, "cross.pos", c.max_len, d, c.dropout, rng);
            let mut layers = Vec::with_capacity(c.cross_layers);
            for l in 0..c.cross_layers {
                let block = |p: &mut ParamStore, name: &str, rng: &mut RngState| {
                    AttentionBlock::new_prenorm(p, &format!("cross.{l}.{name}"), d, c.heads, true, c.dropout, rng)
                };
                let compress_visual = block(&mut p, "compress_visual", rng)?;
                let compress_audio = if c.share_compress_weights {
                    compress_visual.clone()
                } else {
                    block(&mut p, "compress_audio", rng)?
                };
                let expand_visual = block(&mut p, "expand_visual", rng)?;
                let expand_audio = block(&mut p, "expand_audio", rng)?;
                layers.push(CrossLayer {
                    compress_visual,
                    compress_audio,
                    expand_visual,
                    expand_audio,
                    ffn_visual: FeedForward::new(&mut p, &format!("cross.{l}.ffn_visual"), d, c.dropout, true, rng),
                    ffn_audio: FeedForward::new(&mut p, &format!("cross.{l}.ffn_audio"), d, c.dropout, true, rng),
                });
            }
            let fusion_proj = (c.fusion == Fusion::Concat).then(|| Linear::new(&mut p, "cross.fusion", 2 * d, d, true, rng));
            Some(CrossEncoder {
                tokens,
                pos,
                layers,
                fusion_proj,
            })
        } else {
            None
        };
        let joint_norm = LayerNorm::new(&mut p, "joint.norm", d);

        let text_proj = c.use_text.then(|| Linear::new(&mut p, "text.proj", c.text_dim, d, true, rng));
        let generator = if c.use_text {
            (0..c.generator_layers)
                .map(|l| AttentionBlock::new_prenorm(&mut p, &format!("generator.{l}"), d, c.heads, true, c.dropout, rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let generator_pos = PositionalEncoding::new(&mut p, "generator.pos", c.max_len, d, c.dropout, rng);

        let decoder_pos_q = PositionalEncoding::new(&mut p, "decoder.pos_q", c.max_len, d, c.dropout, rng);
        let decoder_pos_k = PositionalEncoding::new(&mut p, "decoder.pos_k", c.max_len, d, c.dropout, rng);
        let decoder = (0..c.decoder_layers)
            .map(|l| {
                Ok(DecoderLayer {
                    self_attn: AttentionBlock::new_prenorm(&mut p, &format!("decoder.{l}.self"), d, c.heads, false, c.dropout, rng)?,
                    cross_attn: AttentionBlock::new_prenorm(&mut p, &format!("decoder.{l}.cross"), d, c.heads, true, c.dropout, rng)?,
                    ffn: FeedForward::new(&mut p, &format!("decoder.{l}.ffn"), d, c.dropout, true, rng),
                })
            })
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(&mut p, "decoder.norm", d);

        let heads = Heads {
            saliency: Linear::new(&mut p, "head.saliency", d, 1, true, rng),
            center: Linear::new(&mut p, "head.center", d, 1, true, rng),
            window: Linear::new(&mut p, "head.window", d, 1, true, rng),
            offset: Linear::new(&mut p, "head.offset", d, 1, true, rng),
        };
        if let Some(b) = heads.center.bias {
            p.get_mut(b).data_mut()[0] = HEATMAP_PRIOR_LOGIT;
        }

        let mut model = Self {
            config,
            params: p,
            visual,
            audio,
            cross,
            joint_norm,
            text_proj,
            generator,
            generator_pos,
            decoder,
            decoder_pos_q,
            decoder_pos_k,
            decoder_norm,
            heads,
        };
        model.set_scaled_attention(model.config.scaled_attention);
        Ok(model)
    }

    fn set_scaled_attention(&mut self, scaled: bool) {
        let mut blocks: Vec<&mut AttentionBlock> = Vec::new();
        for enc in [&mut self.visual, &mut self.audio].into_iter().flatten() {
            blocks.extend(enc.layers.iter_mut().map(|l| &mut l.attn));
        }
        if let Some(cross) = &mut self.cross {
            for l in &mut cross.layers {
                blocks.extend([&mut l.compress_visual, &mut l.compress_audio, &mut l.expand_visual, &mut l.expand_audio]);
            }
        }
        blocks.extend(self.generator.iter_mut());
        for l in &mut self.decoder {
            blocks.extend([&mut l.self_attn, &mut l.cross_attn]);
        }
        for b in blocks {
            b.attn.scaled = scaled;
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn modality_input(&self, s: &mut Session, enc: &ModalityEncoder, seq: Option<&FeatureSequence>, name: &str, id: &str) -> Result<Var> {
        let seq = seq.ok_or_else(|| UmtError::ModalityMismatch(format!("model uses {name} features but sample {id} has none")))?;
        if seq.dim() != enc.feature_dim {
            return Err(UmtError::ModalityMismatch(format!(
                "sample {id}: {name} feature dim {} but model expects {}",
                seq.dim(),
                enc.feature_dim
            )));
        }
        let raw = s.tape.constant(seq.values().clone());
        let x = s.dropout(raw, self.config.pre_dropout_av)?;
        let x = enc.proj.forward(s, x)?;
        let mut x = x;
        for layer in &enc.layers {
            x = self_attention(s, x, &layer.attn, Some(&enc.pos))?;
            x = layer.ffn.forward(s, x)?;
        }
        Ok(x)
    }

    /// Fused clip-aligned representation, `N_v × model_dim`.
    pub fn encode(&self, s: &mut Session, sample: &VideoSample) -> Result<Var> {
        let visual = match &self.visual {
            Some(enc) => Some(self.modality_input(s, enc, sample.visual.as_ref(), "visual", &sample.id)?),
            None => None,
        };
        let audio = match &self.audio {
            Some(enc) => Some(self.modality_input(s, enc, sample.audio.as_ref(), "audio", &sample.id)?),
            None => None,
        };
        let fused = match (visual, audio, &self.cross) {
            (Some(mut v), Some(mut a), Some(cross)) => {
                if s.tape.shape(v)[0] != s.tape.shape(a)[0] {
                    return Err(UmtError::Alignment {
                        id: sample.id.clone(),
                        detail: "visual and audio lengths differ".into(),
                    });
                }
                let n = s.tape.shape(v)[0];
                if cross.tokens.count > n {
                    return Err(UmtError::InvalidArgument(format!(
                        "sample {}: {} bottleneck tokens exceed {n} clips",
                        sample.id, cross.tokens.count
                    )));
                }
                let mut z = cross.tokens.var(s);
                for l in &cross.layers {
                    z = compress(s, v, z, &l.compress_visual, Some(&cross.pos))?;
                    z = compress(s, a, z, &l.compress_audio, Some(&cross.pos))?;
                    v = expand(s, v, z, &l.expand_visual, Some(&cross.pos))?;
                    a = expand(s, a, z, &l.expand_audio, Some(&cross.pos))?;
                    v = l.ffn_visual.forward(s, v)?;
                    a = l.ffn_audio.forward(s, a)?;
                }
                match self.config.fusion {
                    Fusion::Sum => s.tape.add(v, a)?,
                    Fusion::Mean => {
                        let t = s.tape.add(v, a)?;
                        s.tape.scale(t, 0.5)
                    }
                    Fusion::Concat => {
                        let cat = s.tape.concat_cols(&[v, a])?;
                        cross
                            .fusion_proj
                            .as_ref()
                            .expect("concat fusion has a projection")
                            .forward(s, cat)?
                    }
                }
            }
            (Some(x), None, _) | (None, Some(x), _) => x,
            _ => unreachable!("validated: at least one modality"),
        };
        self.joint_norm.forward(s, fused)
    }

    /// Clip-aligned moment queries. With text, joint clips attend to the
    /// projected text tokens; without, a positional table is added instead.
    pub fn generate_queries(&self, s: &mut Session, joint: Var, text: Option<&FeatureSequence>) -> Result<Var> {
        let n = s.tape.shape(joint)[0];
        if !self.config.use_text {
            let pos = self.generator_pos.lookup(s, n)?;
            return s.tape.add(joint, pos);
        }
        let text = text.ok_or_else(|| UmtError::ModalityMismatch("model uses text queries but the sample has no text".into()))?;
        if text.dim() != self.config.text_dim {
            return Err(UmtError::ModalityMismatch(format!(
                "text feature dim {} but model expects {}",
                text.dim(),
                self.config.text_dim
            )));
        }
        let raw = s.tape.constant(text.values().clone());
        let t = s.dropout(raw, self.config.pre_dropout_text)?;
        let t = self.text_proj.as_ref().expect("text projection").forward(s, t)?;
        let mut q = joint;
        for block in &self.generator {
            q = block.forward(s, q, Some(t), None, None)?;
        }
        Ok(q)
    }

    /// Query decoder plus the four heads.
    pub fn decode(&self, s: &mut Session, joint: Var, queries: Var) -> Result<PredictionVars> {
        let n = s.tape.shape(joint)[0];
        if s.tape.shape(queries) != s.tape.shape(joint) {
            return Err(UmtError::ShapeMismatch {
                op: "decode",
                left: s.tape.shape(queries).to_vec(),
                right: s.tape.shape(joint).to_vec(),
            });
        }
        let pq = self.decoder_pos_q.lookup(s, n)?;
        let pk = self.decoder_pos_k.lookup(s, n)?;
        let mut q = queries;
        for l in &self.decoder {
            q = l.self_attn.forward(s, q, None, Some(pq), Some(pk))?;
            q = l.cross_attn.forward(s, q, Some(joint), Some(pq), Some(pk))?;
            q = l.ffn.forward(s, q)?;
        }
        let d = self.decoder_norm.forward(s, q)?;
        let mut head = |lin: &Linear| -> Result<Var> {
            let y = lin.forward(s, d)?;
            s.tape.reshape(y, &[n])
        };
        let sal = head(&self.heads.saliency)?;
        let heat = head(&self.heads.center)?;
        let win = head(&self.heads.window)?;
        let off = head(&self.heads.offset)?;
        Ok(PredictionVars {
            saliency: s.tape.sigmoid(sal),
            heatmap: s.tape.sigmoid(heat),
            window: if self.config.window_softplus { s.tape.softplus(win) } else { win },
            offset: off,
        })
    }

    pub fn forward(&self, s: &mut Session, sample: &VideoSample) -> Result<PredictionVars> {
        let joint = self.encode(s, sample)?;
        let queries = self.generate_queries(s, joint, sample.text.as_ref())?;
        self.decode(s, joint, queries)
    }

    /// Forward pass plus the four losses and their weighted total.
    pub fn loss(&self, s: &mut Session, sample: &VideoSample, weights: &LossWeights) -> Result<(Var, LossVars)> {
        let preds = self.forward(s, sample)?;
        let targets = build_targets(&sample.moments, &sample.saliency, sample.n_clips(), weights)?;
        let sal = saliency_loss(&mut s.tape, preds.saliency, &targets.saliency_targets)?;
        let center = focal_center_loss(&mut s.tape, preds.heatmap, &targets.heatmap, targets.n_moments(), weights)?;
        let (window, offset) = regression_losses(&mut s.tape, preds.window, preds.offset, &targets)?;
        let parts = LossVars {
            saliency: sal,
            center,
            window,
            offset,
        };
        let total = total_loss(&mut s.tape, &parts, weights)?;
        Ok((total, parts))
    }

    /// Evaluation-mode head outputs for one sample.
    pub fn predict_raw(&self, sample: &VideoSample) -> Result<RawPredictions> {
        let mut s = Session::eval(&self.params);
        let p = self.forward(&mut s, sample)?;
        let get = |v: Var| s.tape.value(v).data().to_vec();
        Ok(RawPredictions {
            saliency: get(p.saliency),
            heatmap: get(p.heatmap),
            window: get(p.window),
            offset: get(p.offset),
        })
    }

    /// Replaces parameters with `other`'s after checking names and shapes.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        self.params.load_from(other)
    }

    pub fn param_tensor(&self, name: &str) -> Option<&Tensor> {
        self.params.find(name).map(|id| self.params.get(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features_io::{synthesize_dataset, SynthSpec};

    fn small(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            heads: 2,
            bottleneck_tokens: 2,
            decoder_layers: 1,
            visual_dim: 5,
            audio_dim: 3,
            text_dim: 4,
            max_len: 16,
            fusion,
            ..ModelConfig::default()
        }
    }

    fn sample() -> VideoSample {
        let spec = SynthSpec {
            videos: 1,
            clips: 6,
            visual_dim: 5,
            audio_dim: 3,
            text_dim: 4,
            max_window: 3.0,
            ..SynthSpec::default()
        };
        synthesize_dataset(&spec, &mut RngState::new(4)).unwrap().remove(0)
    }

    /// Re-derives the joint representation one block at a time.
    fn composed(model: &Umt, sample: &VideoSample) -> Tensor {
        let mut s = Session::eval(model.params());
        let stream = |enc: &ModalityEncoder, seq: &FeatureSequence, s: &mut Session| {
            let x = s.tape.constant(seq.values().clone());
            let mut x = enc.proj.forward(s, x).unwrap();
            for l in &enc.layers {
                x = self_attention(s, x, &l.attn, Some(&enc.pos)).unwrap();
                x = l.ffn.forward(s, x).unwrap();
            }
            x
        };
        let mut v = stream(model.visual.as_ref().unwrap(), sample.visual.as_ref().unwrap(), &mut s);
        let mut a = stream(model.audio.as_ref().unwrap(), sample.audio.as_ref().unwrap(), &mut s);
        let cross = model.cross.as_ref().unwrap();
        let mut z = cross.tokens.var(&mut s);
        for l in &cross.layers {
            let zv = compress(&mut s, v, z, &l.compress_visual, Some(&cross.pos)).unwrap();
            z = compress(&mut s, a, zv, &l.compress_audio, Some(&cross.pos)).unwrap();
            let ve = expand(&mut s, v, z, &l.expand_visual, Some(&cross.pos)).unwrap();
            let ae = expand(&mut s, a, z, &l.expand_audio, Some(&cross.pos)).unwrap();
            v = l.ffn_visual.forward(&mut s, ve).unwrap();
            a = l.ffn_audio.forward(&mut s, ae).unwrap();
        }
        let (vt, at) = (s.tape.value(v).clone(), s.tape.value(a).clone());
        let fused: Vec<f64> = match model.config.fusion {
            Fusion::Sum => vt.data().iter().zip(at.data()).map(|(x, y)| x + y).collect(),
            Fusion::Mean => vt.data().iter().zip(at.data()).map(|(x, y)| (x + y) / 2.0).collect(),
            Fusion::Concat => unreachable!(),
        };
        let f = s.tape.constant(Tensor::new(vt.shape().to_vec(), fused).unwrap());
        let out = model.joint_norm.forward(&mut s, f).unwrap();
        s.tape.value(out).clone()
    }

    #[test]
    fn two_modality_encoder_matches_composition() {
        let sample = sample();
        for fusion in [Fusion::Sum, Fusion::Mean] {
            let model = Umt::new(small(fusion), 11).unwrap();
            let mut s = Session::eval(model.params());
            let joint = model.encode(&mut s, &sample).unwrap();
            let want = composed(&model, &sample);
            let diff = s
                .tape
                .value(joint)
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "{fusion:?}: {diff}");
        }
    }

    #[test]
    fn concat_fusion_keeps_model_dim() {
        let model = Umt::new(small(Fusion::Concat), 2).unwrap();
        let mut s = Session::eval(model.params());
        let joint = model.encode(&mut s, &sample()).unwrap();
        assert_eq!(s.tape.shape(joint), &[6, 8]);
        assert!(model.param_tensor("cross.fusion.weight").is_some());
    }

    #[test]
    fn shared_compress_weights_drop_a_block() {
        let shared = Umt::new(ModelConfig { share_compress_weights: true, ..small(Fusion::Sum) }, 2).unwrap();
        let separate = Umt::new(small(Fusion::Sum), 2).unwrap();
        assert!(shared.param_tensor("cross.0.compress_audio.attn.w_q").is_none());
        assert!(shared.params().numel() < separate.params().numel());
    }

    #[test]
    fn heatmap_starts_near_prior() {
        let model = Umt::new(small(Fusion::Sum), 5).unwrap();
        let b = model.param_tensor("head.center.bias").unwrap().item();
        assert_eq!(b, HEATMAP_PRIOR_LOGIT);
    }
}
