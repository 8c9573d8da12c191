//! Mini-batch training loop.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmt::checkpoint::Checkpoint;
use crate::nmt::model::{backward, TrainExample};
use crate::nmt::optim::{adam_step, lr_schedule, AdamConfig, AdamState};
use crate::nmt::params::TransformerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Target weight of the gold token.
    pub alpha: f64,
    /// A batch grows until its target tokens reach this count.
    pub batch_tokens: usize,
    pub warmup_steps: usize,
    pub adam: AdamConfig,
    pub max_steps: usize,
    pub seed: u64,
    pub constraint_in_training: bool,
    /// Multiplies the scheduled learning rate.
    pub lr_scale: f64,
    /// Write `step_<n>.ckpt` into the checkpoint directory every this many steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            batch_tokens: 200,
            warmup_steps: 100,
            adam: AdamConfig::default(),
            max_steps: 600,
            seed: 1,
            constraint_in_training: true,
            lr_scale: 0.5,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.warmup_steps == 0 || self.batch_tokens == 0 {
            return Err(Error::InvalidArgument("warmup_steps and batch_tokens must be at least 1".into()));
        }
        if !(self.lr_scale > 0.0) {
            return Err(Error::InvalidArgument("lr_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of every step, in order.
    pub loss_history: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// Mean of the last `n` losses.
    pub fn final_loss(&self, n: usize) -> f64 {
        let tail = &self.loss_history[self.loss_history.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

fn batches(order: &[usize], data: &[TrainExample], batch_tokens: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for &i in order {
        cur.push(i);
        tokens += data[i].target_tokens();
        if tokens >= batch_tokens {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Trains `params` in place for `config.max_steps` steps. Each epoch visits
/// the examples in a seeded random order. Masks attached to the examples are
/// used only when `constraint_in_training` is set.
pub fn train(
    params: &mut TransformerParams,
    data: &[TrainExample],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    let stripped: Vec<TrainExample>;
    let data = if config.constraint_in_training {
        data
    } else {
        stripped = data
            .iter()
            .map(|e| TrainExample {
                mask: None,
                ..e.clone()
            })
            .collect();
        &stripped
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(params);
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(config.max_steps),
        checkpoints: Vec::new(),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let d_model = params.config.d_model;
    'epochs: loop {
        order.shuffle(&mut rng);
        for idx in batches(&order, data, config.batch_tokens) {
            let step = report.loss_history.len() + 1;
            if step > config.max_steps {
                break 'epochs;
            }
            let batch: Vec<TrainExample> = idx.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = backward(params, &batch, config.alpha)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let lr = config.lr_scale * lr_schedule(step, d_model, config.warmup_steps);
            adam_step(params, &grads, &config.adam, &mut state, lr);
            report.loss_history.push(loss);
            debug!("step {step} loss {loss:.5} lr {lr:.6}");
            if step % 100 == 0 {
                info!("step {step} loss {loss:.4}");
            }
            if let (Some(every), Some(dir)) = (config.checkpoint_every, checkpoint_dir) {
                if every > 0 && step % every == 0 {
                    let path = dir.join(format!("step_{step}.ckpt"));
                    Checkpoint {
                        params: params.clone(),
                        step: step as u64,
                    }
                    .save(&path)?;
                    report.checkpoints.push(path);
                }
            }
        }
        if config.max_steps == 0 {
            break;
        }
    }
    Ok(report)
}
