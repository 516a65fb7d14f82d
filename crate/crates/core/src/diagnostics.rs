//! Whole-model gradient checking and attention cost measurement.

use serde::{Deserialize, Serialize};

use crate::attention::{compress, expand, full_cross_attention, AttentionBlock, AttentionParams, BottleneckTokens};
use crate::error::{Result, UmtError};
use crate::features_io::{synthesize_dataset, SynthSpec, VideoSample};
use crate::gradcheck::{relative_error, FD_STEP, REL_ERR_FLOOR};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, Umt};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::session::Session;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub clips: usize,
    pub text_tokens: usize,
    pub bottleneck_tokens: usize,
    pub decoder_layers: usize,
    /// Number of scalar parameters sampled for comparison.
    pub samples: usize,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model_dim: 8,
            heads: 2,
            clips: 4,
            text_tokens: 3,
            bottleneck_tokens: 2,
            decoder_layers: 1,
            samples: 256,
            tolerance: 1e-4,
            step: FD_STEP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<GradcheckFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Builds the reduced model and a matching synthetic sample. Dropout is
/// disabled so that the loss is a deterministic function of the parameters.
pub fn gradcheck_setup(cfg: &GradcheckConfig, seed: u64) -> Result<(Umt, VideoSample)> {
    let spec = SynthSpec {
        videos: 1,
        clips: cfg.clips,
        visual_dim: 5,
        audio_dim: 3,
        text_dim: 4,
        text_tokens: cfg.text_tokens,
        min_window: 1.0,
        max_window: (cfg.clips as f64 / 2.0).max(1.0),
        max_moments: 1,
        ..SynthSpec::default()
    };
    let mut rng = RngState::new(seed);
    let sample = synthesize_dataset(&spec, &mut rng)?.remove(0);
    let model_cfg = ModelConfig {
        model_dim: cfg.model_dim,
        heads: cfg.heads,
        bottleneck_tokens: cfg.bottleneck_tokens,
        decoder_layers: cfg.decoder_layers,
        dropout: 0.0,
        pre_dropout_av: 0.0,
        pre_dropout_text: 0.0,
        visual_dim: spec.visual_dim,
        audio_dim: spec.audio_dim,
        text_dim: spec.text_dim,
        max_len: cfg.clips.max(cfg.text_tokens),
        ..ModelConfig::default()
    };
    let model = Umt::new(model_cfg, seed.wrapping_add(1))?;
    Ok((model, sample))
}

fn loss_value(model: &Umt, sample: &VideoSample, w: &LossWeights) -> Result<f64> {
    let mut s = Session::eval(model.params());
    let (loss, _) = model.loss(&mut s, sample, w)?;
    Ok(s.tape.value(loss).item())
}

/// Compares backpropagated gradients of the total loss against central
/// differences on `cfg.samples` randomly chosen scalar parameters.
pub fn full_model_gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let (mut model, sample) = gradcheck_setup(cfg, seed)?;
    let w = LossWeights::default();
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut s = Session::eval(model.params());
        let (loss, _) = model.loss(&mut s, &sample, &w)?;
        s.tape.backward(loss)?;
        let ids: Vec<ParamId> = model.params().ids().collect();
        ids.into_iter()
            .map(|id| {
                let g = s
                    .tape
                    .param_var(id)
                    .and_then(|v| s.tape.grad(v).map(<[f64]>::to_vec))
                    .unwrap_or_else(|| vec![0.0; model.params().get(id).numel()]);
                (id, g)
            })
            .collect()
    };
    // Flat index over every scalar parameter.
    let offsets: Vec<usize> = analytic
        .iter()
        .scan(0, |acc, (_, g)| {
            let start = *acc;
            *acc += g.len();
            Some(start)
        })
        .collect();
    let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
    if total < cfg.samples {
        return Err(UmtError::InvalidArgument(format!(
            "model has {total} parameters, fewer than the {} requested",
            cfg.samples
        )));
    }
    let mut rng = RngState::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut flat: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut flat);
    flat.truncate(cfg.samples);
    flat.sort_unstable();

    let mut report = GradcheckReport {
        checked: 0,
        max_rel_error: 0.0,
        tolerance: cfg.tolerance,
        failures: Vec::new(),
    };
    for f in flat {
        let k = offsets.partition_point(|&o| o <= f) - 1;
        let (id, ref grad) = analytic[k];
        let i = f - offsets[k];
        let orig = model.params().get(id).data()[i];
        model.params_mut().get_mut(id).data_mut()[i] = orig + cfg.step;
        let plus = loss_value(&model, &sample, &w)?;
        model.params_mut().get_mut(id).data_mut()[i] = orig - cfg.step;
        let minus = loss_value(&model, &sample, &w)?;
        model.params_mut().get_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let err = relative_error(grad[i], numeric, REL_ERR_FLOOR);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if !(err < cfg.tolerance) {
            report.failures.push(GradcheckFailure {
                param: model.params().name(id).to_string(),
                index: i,
                analytic: grad[i],
                numeric,
                rel_error: err,
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub bottleneck_tokens: usize,
    pub lengths: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model_dim: 256,
            heads: 8,
            bottleneck_tokens: 4,
            lengths: vec![32, 64, 128, 256],
        }
    }
}

/// Multiply-accumulate counts of one cross-modal exchange at one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnCost {
    pub clips: usize,
    pub bottleneck_total: u64,
    pub bottleneck_mixing: u64,
    pub full_total: u64,
    pub full_mixing: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_dim: usize,
    pub bottleneck_tokens: usize,
    pub costs: Vec<AttnCost>,
}

impl BenchReport {
    /// Growth of each counter between consecutive lengths, as
    /// `(from, to, bottleneck_total, bottleneck_mixing, full_total, full_mixing)`.
    pub fn ratios(&self) -> Vec<(usize, usize, f64, f64, f64, f64)> {
        self.costs
            .windows(2)
            .map(|w| {
                let r = |a: u64, b: u64| b as f64 / a as f64;
                (
                    w[0].clips,
                    w[1].clips,
                    r(w[0].bottleneck_total, w[1].bottleneck_total),
                    r(w[0].bottleneck_mixing, w[1].bottleneck_mixing),
                    r(w[0].full_total, w[1].full_total),
                    r(w[0].full_mixing, w[1].full_mixing),
                )
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} {:>16} {:>16} {:>16} {:>16}",
            "N_v", "bottleneck", "bottleneck_mix", "full", "full_mix"
        );
        for c in &self.costs {
            let _ = writeln!(
                out,
                "{:>6} {:>16} {:>16} {:>16} {:>16}",
                c.clips, c.bottleneck_total, c.bottleneck_mixing, c.full_total, c.full_mixing
            );
        }
        for (a, b, bt, bm, ft, fm) in self.ratios() {
            let _ = writeln!(out, "{a}->{b}: bottleneck x{bt:.3} (mix x{bm:.3}), full x{ft:.3} (mix x{fm:.3})");
        }
        out
    }
}

/// Counts the MACs of compress+expand for two modalities through shared
/// bottleneck tokens, and of bidirectional full cross-attention, at each
/// requested sequence length.
pub fn bench_attention(cfg: &BenchConfig, seed: u64) -> Result<BenchReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let d = cfg.model_dim;
    let block = |store: &mut ParamStore, name: &str, rng: &mut RngState| -> Result<AttentionBlock> {
        Ok(AttentionBlock::plain(AttentionParams::new(store, name, d, cfg.heads, rng)?))
    };
    let cv = block(&mut store, "compress_v", &mut rng)?;
    let ca = block(&mut store, "compress_a", &mut rng)?;
    let ev = block(&mut store, "expand_v", &mut rng)?;
    let ea = block(&mut store, "expand_a", &mut rng)?;
    let fab = block(&mut store, "full_ab", &mut rng)?;
    let fba = block(&mut store, "full_ba", &mut rng)?;
    let tokens = BottleneckTokens::new(&mut store, "tokens", cfg.bottleneck_tokens, d, &mut rng)?;
    let mut costs = Vec::new();
    for &n in &cfg.lengths {
        let xv = Tensor::normal(&[n, d], 1.0, &mut rng);
        let xa = Tensor::normal(&[n, d], 1.0, &mut rng);

        let mut s = Session::eval(&store);
        let v = s.tape.constant(xv.clone());
        let a = s.tape.constant(xa.clone());
        let z = tokens.var(&mut s);
        let z = compress(&mut s, v, z, &cv, None)?;
        let z = compress(&mut s, a, z, &ca, None)?;
        expand(&mut s, v, z, &ev, None)?;
        expand(&mut s, a, z, &ea, None)?;
        let bottleneck = s.tape.macs();

        let mut s = Session::eval(&store);
        let v = s.tape.constant(xv);
        let a = s.tape.constant(xa);
        full_cross_attention(&mut s, v, a, &fab, &fba)?;
        let full = s.tape.macs();

        costs.push(AttnCost {
            clips: n,
            bottleneck_total: bottleneck.total,
            bottleneck_mixing: bottleneck.mixing,
            full_total: full.total,
            full_mixing: full.mixing,
        });
    }
    Ok(BenchReport {
        model_dim: d,
        bottleneck_tokens: cfg.bottleneck_tokens,
        costs,
    })
}
