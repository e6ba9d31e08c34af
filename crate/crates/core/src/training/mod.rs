//! Joint optimisation of the completion and translation objectives:
//! `L = alpha * L_wlac + (1 - alpha) * L_mt`.

mod batching;
mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::datagen::WlacExample;
use crate::error::{Error, Result};
use crate::model::{Codec, JointModel, LossBatch, Smoothing};
use crate::nn::{Adam, Graph};
use crate::seed;

pub use batching::{assemble, encode_examples, epoch_batches, Encoded};
pub use gradcheck::{gradient_check, GradCheckEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    /// Encoder plus decoder positions per batch.
    pub batch_tokens: usize,
    pub seed: u64,
    /// Zero disables periodic checkpoints; the final step always reports.
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub wlac_label_smoothing: f64,
    pub mt_label_smoothing: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Stop once the mean WLAC training loss over the last eval window falls below this.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            learning_rate: 5e-4,
            warmup_steps: 4000,
            max_steps: 200_000,
            batch_tokens: 32_000,
            seed: 1,
            checkpoint_every: 0,
            eval_every: 1000,
            wlac_label_smoothing: 0.0,
            mt_label_smoothing: 0.1,
            clip_norm: None,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    /// Settings for desk-scale models on the toy task.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 3e-3,
            warmup_steps: 300,
            max_steps: 3000,
            batch_tokens: 1200,
            eval_every: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be positive".into()));
        }
        Ok(())
    }

    fn smoothing(&self) -> Smoothing {
        Smoothing {
            wlac: self.wlac_label_smoothing,
            mt: self.mt_label_smoothing,
        }
    }

    /// Linear warmup, then decay with the inverse square root of the step.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        let (s, w) = (step.max(1) as f64, self.warmup_steps as f64);
        self.learning_rate * (s / w).min((w / s).sqrt())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} outside [0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub wlac_loss: f64,
    pub mt_loss: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub fn new(alpha: f64, wlac_loss: f64, mt_loss: f64) -> Self {
        Self {
            wlac_loss,
            mt_loss,
            combined: alpha * wlac_loss + (1.0 - alpha) * mt_loss,
        }
    }
}

/// Both objectives on `batch` without dropout. Requires the MT decoder.
pub fn compute_loss(model: &JointModel, codec: &Codec, batch: &[WlacExample], alpha: f64) -> Result<LossBreakdown> {
    compute_loss_with(model, codec, batch, alpha, &TrainConfig::default())
}

pub fn compute_loss_with(
    model: &JointModel,
    codec: &Codec,
    batch: &[WlacExample],
    alpha: f64,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset { skipped: 0 });
    }
    let refs: Vec<&WlacExample> = batch.iter().collect();
    let batch = LossBatch::from_examples(codec, model.config(), &refs)?;
    let (w, m) = batch_losses(model, &batch, cfg.smoothing())?;
    Ok(LossBreakdown::new(alpha, w, m))
}

fn batch_losses(model: &JointModel, batch: &LossBatch, smoothing: Smoothing) -> Result<(f64, f64)> {
    let mut g = Graph::new(model.params());
    let nodes = model.loss_nodes(&mut g, batch, true, true, smoothing)?;
    let w = g.scalar(nodes.wlac.expect("requested"));
    let m = g.scalar(nodes.mt.expect("requested"));
    Ok((w, m))
}

/// Inference copy without the MT decoder.
pub fn strip_decoder(model: &JointModel) -> JointModel {
    model.strip_decoder()
}

/// Training-batch losses of one step; a term is absent when its weight was zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub wlac_loss: Option<f64>,
    pub mt_loss: Option<f64>,
    pub combined: f64,
    pub learning_rate: f64,
}

/// State handed to the evaluation hook.
pub struct EvalPoint<'a> {
    pub step: usize,
    pub model: &'a JointModel,
    /// Mean training losses since the previous report.
    pub window: LossWindow,
    pub checkpoint: bool,
    pub last: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossWindow {
    pub wlac_loss: Option<f64>,
    pub mt_loss: Option<f64>,
    pub combined: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub window: LossWindow,
    pub checksum: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub checkpoints: Vec<HistoryEntry>,
    pub steps: Vec<StepLoss>,
    pub stopped_early: bool,
}

#[derive(Default)]
struct Accumulator {
    wlac: f64,
    mt: f64,
    combined: f64,
    steps: usize,
}

impl Accumulator {
    fn add(&mut self, s: &StepLoss) {
        self.wlac += s.wlac_loss.unwrap_or(0.0);
        self.mt += s.mt_loss.unwrap_or(0.0);
        self.combined += s.combined;
        self.steps += 1;
    }

    fn take(&mut self, alpha: f64) -> LossWindow {
        let n = self.steps.max(1) as f64;
        let w = LossWindow {
            wlac_loss: (alpha > 0.0).then_some(self.wlac / n),
            mt_loss: (alpha < 1.0).then_some(self.mt / n),
            combined: self.combined / n,
            steps: self.steps,
        };
        *self = Self::default();
        w
    }
}

/// Runs the optimisation loop. `eval_hook` is called every `eval_every` and
/// `checkpoint_every` steps and after the last step.
pub fn train(
    model: &mut JointModel,
    codec: &Codec,
    data: &[WlacExample],
    cfg: &TrainConfig,
    eval_hook: &mut dyn FnMut(&EvalPoint) -> Result<()>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset { skipped: 0 });
    }
    let want_wlac = cfg.alpha > 0.0;
    let want_mt = cfg.alpha < 1.0;
    if want_mt && !model.has_mt() {
        return Err(Error::Capability("joint training needs the MT decoder".into()));
    }
    let encoded = encode_examples(codec, model.config(), data)?;
    let lengths: Vec<usize> = encoded.iter().map(|e| e.tokens(want_mt)).collect();
    let mut optimizer = Adam::new(model.params().len());
    let mut history = TrainHistory::default();
    let mut acc = Accumulator::default();
    let mut epoch = 0u64;
    let mut queue: Vec<Vec<usize>> = Vec::new();

    for step in 1..=cfg.max_steps {
        if queue.is_empty() {
            queue = epoch_batches(&lengths, cfg.batch_tokens, cfg.seed, epoch);
            queue.reverse();
            epoch += 1;
        }
        let indices = queue.pop().expect("nonempty epoch");
        let items: Vec<&Encoded> = indices.iter().map(|&i| &encoded[i]).collect();
        let batch = assemble(&items);
        let lr = cfg.learning_rate_at(step);

        let (loss, mut grads) = {
            let rng = seed::rng(seed::mix(&[cfg.seed, step as u64, 0xd120]));
            let mut g = Graph::training(model.params(), rng);
            let nodes = model.loss_nodes(&mut g, &batch, want_wlac, want_mt, cfg.smoothing())?;
            let w = nodes.wlac.map(|n| g.scalar(n));
            let m = nodes.mt.map(|n| g.scalar(n));
            let combined = cfg.alpha * w.unwrap_or(0.0) + (1.0 - cfg.alpha) * m.unwrap_or(0.0);
            let mut seeds = Vec::new();
            if let Some(n) = nodes.wlac {
                seeds.push((n, cfg.alpha));
            }
            if let Some(n) = nodes.mt {
                seeds.push((n, 1.0 - cfg.alpha));
            }
            let grads = g.backward(&seeds);
            let loss = StepLoss {
                step,
                wlac_loss: w,
                mt_loss: m,
                combined,
                learning_rate: lr,
            };
            (loss, grads)
        };
        if !loss.combined.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!(
                    "wlac={:?} mt={:?} lr={lr:e} batch={indices:?} params={}",
                    loss.wlac_loss,
                    loss.mt_loss,
                    model.params().checksum()
                ),
            });
        }
        if let Some(max) = cfg.clip_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        optimizer.step(model.params_mut(), &grads, lr);
        acc.add(&loss);
        history.steps.push(loss);

        let last = step == cfg.max_steps;
        let is_eval = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        let is_ckpt = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
        if is_eval || is_ckpt || last {
            let window = acc.take(cfg.alpha);
            let stop = matches!((cfg.stop_below, window.wlac_loss), (Some(t), Some(w)) if w < t);
            let point = EvalPoint {
                step,
                model,
                window,
                checkpoint: is_ckpt || last || stop,
                last: last || stop,
            };
            eval_hook(&point)?;
            if point.checkpoint {
                history.checkpoints.push(HistoryEntry {
                    step,
                    window,
                    checksum: model.params().checksum(),
                });
            }
            if stop {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: 100,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate_at(50) - 0.5).abs() < 1e-12);
        assert!((cfg.learning_rate_at(100) - 1.0).abs() < 1e-12);
        assert!((cfg.learning_rate_at(400) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn breakdown_arithmetic() {
        let b = LossBreakdown::new(0.5, 2.0, 4.0);
        assert_eq!(b.combined, 3.0);
        assert_eq!(LossBreakdown::new(1.0, 2.5, 7.0).combined, 2.5);
        assert_eq!(LossBreakdown::new(0.0, 2.5, 7.0).combined, 7.0);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let cfg = TrainConfig {
            alpha: 1.5,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
