//! Training loop, evaluation and prediction over whole datasets.

use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::decoding::{compose_moments, extract_centers, CenterMode, PredictionRecord, DEFAULT_TOP_K};
use crate::error::{Result, UmtError};
use crate::features_io::VideoSample;
use crate::losses::{LossComponents, LossWeights};
use crate::metrics::{evaluate_records, EvalReport, Tasks};
use crate::model::Umt;
use crate::optim::{clip_global_norm, AdamW};
use crate::params::ParamId;
use crate::rng::RngState;
use crate::session::Session;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Write a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Which task losses are active.
    pub tasks: Tasks,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            loss: LossWeights::default(),
            checkpoint_every: 0,
            grad_clip: None,
            tasks: Tasks::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(UmtError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(UmtError::Config("learning_rate must be finite and nonnegative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(UmtError::Config("weight_decay must be finite and nonnegative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(UmtError::Config("grad_clip must be positive".into()));
            }
        }
        self.loss.validate()
    }

    /// Loss weights with the inactive task's terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss.clone();
        if !self.tasks.highlight() {
            w.saliency = 0.0;
        }
        if !self.tasks.moment_retrieval() {
            w.center = 0.0;
            w.window = 0.0;
            w.offset = 0.0;
        }
        w
    }
}

/// Batch-mean losses for one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub total: f64,
    pub components: LossComponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the step totals in this epoch.
    pub loss: f64,
    pub components: LossComponents,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Per-epoch hook; returning `false` stops training after that epoch.
pub type EpochCallback<'a> = dyn FnMut(&Umt, &EpochLog) -> Result<bool> + 'a;

pub struct Trainer {
    pub config: TrainConfig,
    optimizer: AdamW,
    shuffle_rng: RngState,
    dropout_rng: RngState,
}

impl Trainer {
    pub fn new(model: &Umt, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut root = RngState::new(config.seed);
        let shuffle_rng = root.fork();
        let dropout_rng = root.fork();
        Ok(Self {
            optimizer: AdamW::new(model.params(), config.learning_rate, config.weight_decay),
            config,
            shuffle_rng,
            dropout_rng,
        })
    }

    /// One forward/backward/update over a batch; returns the batch log.
    pub fn step(&mut self, model: &mut Umt, batch: &[&VideoSample], epoch: usize, batch_id: usize) -> Result<StepLog> {
        let weights = self.config.effective_weights();
        let (total, components, mut grads) = {
            let mut s = Session::train(model.params(), &mut self.dropout_rng);
            let mut acc = None;
            let mut sums = LossComponents::default();
            for sample in batch {
                let (loss, parts) = model.loss(&mut s, sample, &weights)?;
                let v = parts.values(&s.tape);
                sums.saliency += v.saliency;
                sums.center += v.center;
                sums.window += v.window;
                sums.offset += v.offset;
                acc = Some(match acc {
                    None => loss,
                    Some(a) => s.tape.add(a, loss)?,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let total = s.tape.scale(acc.expect("nonempty batch"), inv);
            let value = s.tape.value(total).item();
            if !value.is_finite() {
                return Err(UmtError::NonFiniteLoss { epoch, batch: batch_id });
            }
            s.tape.backward(total)?;
            let grads: Vec<(ParamId, Vec<f64>)> = s.tape.param_grads().into_iter().map(|(id, g)| (id, g.to_vec())).collect();
            let comps = LossComponents {
                saliency: sums.saliency * inv,
                center: sums.center * inv,
                window: sums.window * inv,
                offset: sums.offset * inv,
            };
            (value, comps, grads)
        };
        if let Some(max) = self.config.grad_clip {
            let norm = clip_global_norm(&mut grads, max);
            debug!("epoch {epoch} batch {batch_id}: grad norm {norm:.4}");
        }
        self.optimizer.step(model.params_mut(), &grads)?;
        Ok(StepLog {
            epoch,
            batch: batch_id,
            total,
            components,
        })
    }

    /// Full training run. Checkpoints go to `out_dir` (periodic ones as
    /// `epoch_NNNN.ckpt`, the final one as `model.ckpt`) when given.
    pub fn train(
        &mut self,
        model: &mut Umt,
        dataset: &[VideoSample],
        out_dir: Option<&Path>,
        mut on_epoch: Option<&mut EpochCallback>,
    ) -> Result<TrainHistory> {
        if dataset.is_empty() {
            return Err(UmtError::InvalidArgument("training set is empty".into()));
        }
        for s in dataset {
            s.validate()?;
        }
        let mut history = TrainHistory::default();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for epoch in 1..=self.config.epochs {
            self.shuffle_rng.shuffle(&mut order);
            let mut steps = Vec::new();
            for (batch_id, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&VideoSample> = chunk.iter().map(|&i| &dataset[i]).collect();
                steps.push(self.step(model, &batch, epoch, batch_id)?);
            }
            let n = steps.len() as f64;
            let mean = |f: fn(&StepLog) -> f64| steps.iter().map(f).sum::<f64>() / n;
            let log = EpochLog {
                epoch,
                loss: mean(|s| s.total),
                components: LossComponents {
                    saliency: mean(|s| s.components.saliency),
                    center: mean(|s| s.components.center),
                    window: mean(|s| s.components.window),
                    offset: mean(|s| s.components.offset),
                },
            };
            info!("epoch {epoch}: loss {:.6}", log.loss);
            history.steps.extend(steps);
            let keep_going = match on_epoch.as_mut() {
                Some(cb) => cb(model, &log)?,
                None => true,
            };
            history.epochs.push(log);
            if let Some(dir) = out_dir {
                if self.config.checkpoint_every > 0 && epoch % self.config.checkpoint_every == 0 {
                    checkpoint::save(model, &dir.join(format!("epoch_{epoch:04}.ckpt")))?;
                }
            }
            if !keep_going {
                break;
            }
        }
        if let Some(dir) = out_dir {
            checkpoint::save(model, &dir.join("model.ckpt"))?;
        }
        Ok(history)
    }
}

/// How raw heads become ranked moments at inference time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub center_mode: CenterMode,
    pub top_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            center_mode: CenterMode::AllClips,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Evaluation-mode prediction record for one sample.
pub fn predict_sample(model: &Umt, sample: &VideoSample, decode: &DecodeConfig) -> Result<PredictionRecord> {
    let raw = model.predict_raw(sample)?;
    let centers = extract_centers(&raw.heatmap, decode.center_mode, decode.top_k)?;
    let moments = compose_moments(&centers, &raw.heatmap, &raw.window, &raw.offset, sample.clip_seconds)?;
    Ok(PredictionRecord::new(&sample.id, &moments, &raw.saliency))
}

pub fn predict(model: &Umt, samples: &[VideoSample], decode: &DecodeConfig) -> Result<Vec<PredictionRecord>> {
    samples.iter().map(|s| predict_sample(model, s, decode)).collect()
}

/// Predicts every sample and scores the requested tasks.
pub fn evaluate(model: &Umt, samples: &[VideoSample], tasks: Tasks, decode: &DecodeConfig) -> Result<EvalReport> {
    let records = predict(model, samples, decode)?;
    evaluate_records(&records, samples, tasks)
}
