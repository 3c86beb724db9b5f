//! Next-token language-model pre-training on a task's unlabeled prompt
//! distribution (all four quadrants, equal weight).

use serde::{Deserialize, Serialize};

use crate::numerics::{Adam, AdamConfig, Graph, NumericsError};
use crate::rng::SeedTree;
use crate::taskgen::{sample_quadrant, Quadrant, SyntheticTask, TaskError};
use crate::transformer::{ModelError, PolicyModel, TokenBatch};

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid pretrain config: {0}")]
    Config(String),
    #[error(
        "pre-training diverged at step {step}: loss {loss:.4} has exceeded twice the initial \
         loss {initial:.4} for {window} consecutive steps"
    )]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },
}

/// Consecutive steps above twice the initial loss that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 256,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        if self.batch_size == 0 {
            return Err(PretrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PretrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(PretrainError::Config("Adam moments must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// One pre-training batch: prompts drawn round-robin over the four quadrants.
pub fn mixture_batch(
    task: SyntheticTask,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<usize>>, TaskError> {
    (0..batch_size)
        .map(|i| {
            let q = Quadrant::ALL[i % Quadrant::ALL.len()];
            sample_quadrant(task, q, rng).map(|p| p.tokens().collect())
        })
        .collect()
}

/// Mean next-token cross-entropy (nats) of `model` on the given sequences.
pub fn lm_loss(model: &PolicyModel, rows: &[Vec<usize>]) -> Result<f64, ModelError> {
    let (inputs, labels) = shift(rows);
    let batch = TokenBatch::from_rows(&inputs)?;
    let mut g = Graph::with_params(model.params());
    let out = model.forward(&mut g, &batch)?;
    let loss = g.cross_entropy(out.logits, &labels)?;
    Ok(g.value(loss).item() as f64)
}

fn shift(rows: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let inputs = rows.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
    let labels = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    (inputs, labels)
}

/// Trains `model` in place and returns the per-step loss curve (nats/token).
pub fn pretrain_lm(
    model: &mut PolicyModel,
    task: SyntheticTask,
    cfg: &PretrainConfig,
    seeds: &SeedTree,
) -> Result<Vec<f64>, PretrainError> {
    cfg.validate()?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: 0.0,
        },
        model.params(),
    );
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut above = 0usize;
    for step in 0..cfg.steps {
        let rows = mixture_batch(task, cfg.batch_size, &mut seeds.rng("pretrain-batch", step as u64))?;
        let (inputs, labels) = shift(&rows);
        let batch = TokenBatch::from_rows(&inputs)?;
        let (loss, grads) = {
            let mut g = Graph::with_params(model.params());
            let out = model.forward(&mut g, &batch)?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            (g.value(loss).item() as f64, g.backward(loss))
        };
        opt.step(model.params_mut(), &grads?);
        curve.push(loss);

        let initial = curve[0];
        if loss > 2.0 * initial {
            above += 1;
            if above >= DIVERGENCE_WINDOW {
                return Err(PretrainError::Diverged {
                    step,
                    loss,
                    initial,
                    window: DIVERGENCE_WINDOW,
                });
            }
        } else {
            above = 0;
        }
        if step % 100 == 0 {
            log::debug!("pretrain {task} step {step}: loss {loss:.4}");
        }
    }
    Ok(curve)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut acc = 0.0;
    curve
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            acc += v;
            if i >= window {
                acc -= curve[i - window];
            }
            acc / (i + 1).min(window) as f64
        })
        .collect()
}
