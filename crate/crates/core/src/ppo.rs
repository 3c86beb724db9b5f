//! PPO fine-tuning against a target-gated reward, with a per-token KL penalty
//! toward a frozen reference policy and an adaptive KL coefficient.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{clip_grad_norm, Adam, AdamConfig, Element, Graph, NumericsError, Tensor};
use crate::reward::RewardSpec;
use crate::rng::{SeedTree, StreamRng};
use crate::taskgen::{Example, Prompt, SyntheticTask, PROMPT_LEN};
use crate::transformer::{ModelError, PolicyModel, Sampling, TokenBatch};

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("advantage estimation: {rewards} rewards but {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("the policy has no value head")]
    NoValueHead,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, PpoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub ppo_epochs: usize,
    pub total_ppo_epochs: usize,
    pub init_kl_coef: f64,
    pub target_kl: f64,
    pub vf_coef: f64,
    pub horizon: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub minibatch_size: usize,
    pub completion_len: usize,
    pub temperature: f64,
    /// Global gradient-norm clip; off when absent.
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 1.41e-5,
            ppo_epochs: 4,
            total_ppo_epochs: 200,
            init_kl_coef: 0.2,
            target_kl: 0.1,
            vf_coef: 0.1,
            horizon: 10000.0,
            clip_eps: 0.2,
            gamma: 1.0,
            gae_lambda: 0.95,
            minibatch_size: 64,
            completion_len: crate::reward::COMPLETION_LEN,
            temperature: 1.0,
            max_grad_norm: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if self.batch_size == 0 || self.minibatch_size == 0 || self.ppo_epochs == 0 {
            return bad("batch_size, minibatch_size and ppo_epochs must be positive");
        }
        if self.minibatch_size > self.batch_size {
            return bad("minibatch_size exceeds batch_size");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("init_kl_coef", self.init_kl_coef),
            ("target_kl", self.target_kl),
            ("vf_coef", self.vf_coef),
            ("horizon", self.horizon),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PpoError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return bad("gamma and gae_lambda must be at most 1");
        }
        if self.completion_len < 2 {
            return bad("completion_len must be at least 2");
        }
        if matches!(self.max_grad_norm, Some(v) if !(v > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// One batch of episodes with everything PPO needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub prompts: Vec<Prompt>,
    pub targets: Vec<bool>,
    pub completions: Vec<Vec<usize>>,
    /// Behavior-policy log-probs of each completion token.
    pub logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
    /// Value estimate of the state before each completion token.
    pub values: Vec<Vec<f64>>,
    /// Terminal task reward per episode.
    pub rewards: Vec<f64>,
    /// `-beta * kl_t`, plus the terminal reward on the last token.
    pub shaped: Vec<Vec<f64>>,
    pub beta: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn kl(&self, episode: usize) -> Vec<f64> {
        self.logprobs[episode]
            .iter()
            .zip(&self.ref_logprobs[episode])
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Mean over episodes of the summed per-token KL estimate.
    pub fn mean_kl(&self) -> f64 {
        (0..self.len()).map(|i| self.kl(i).iter().sum::<f64>()).sum::<f64>() / self.len() as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }

    /// `prompt ++ completion` token rows.
    pub fn full_sequences(&self) -> Vec<Vec<usize>> {
        self.prompts
            .iter()
            .zip(&self.completions)
            .map(|(p, c)| p.tokens().chain(c.iter().copied()).collect())
            .collect()
    }
}

pub fn digits(tokens: &[usize]) -> Vec<u8> {
    tokens.iter().map(|&t| t as u8).collect()
}

/// Log-probs of each completion token and the values before it, from one
/// forward pass over `prompt ++ completion[..len-1]`.
fn score_sequences(
    model: &PolicyModel,
    seqs: &[Vec<usize>],
    completion_len: usize,
) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    let inputs: Vec<Vec<usize>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let batch = TokenBatch::from_rows(&inputs)?;
    let mut g = Graph::with_params(model.params());
    let out = model.forward(&mut g, &batch)?;
    let lp = g.log_softmax(out.logits)?;
    let lpv = g.value(lp);
    let vocab = model.config().vocab_size;
    let len = batch.len;
    let start = len + 1 - completion_len - 1;
    let logprobs = seqs
        .iter()
        .enumerate()
        .map(|(b, s)| {
            (0..completion_len)
                .map(|k| {
                    let pos = start + k;
                    lpv.data()[(b * len + pos) * vocab + s[pos + 1]] as f64
                })
                .collect()
        })
        .collect();
    let values = out.values.map(|v| {
        let vv = g.value(v);
        (0..seqs.len())
            .map(|b| {
                (0..completion_len)
                    .map(|k| vv.data()[b * len + start + k] as f64)
                    .collect()
            })
            .collect()
    });
    Ok((logprobs, values))
}

/// Episodes per parallel sampling chunk.
const ROLLOUT_CHUNK: usize = 64;

/// Samples `batch_size` prompts from `train` and one completion for each.
/// Episode `i` draws from its own stream `seeds.rng("episode", i)`.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    policy: &PolicyModel,
    reference: &PolicyModel,
    train: &[Example],
    task: SyntheticTask,
    reward: &RewardSpec<Prompt, [u8]>,
    beta: f64,
    cfg: &PpoConfig,
    seeds: &SeedTree,
) -> Result<RolloutBatch> {
    if train.is_empty() {
        return Err(PpoError::EmptyTrainSet);
    }
    if policy.value_head_params().is_none() {
        return Err(PpoError::NoValueHead);
    }
    let mut pick = seeds.rng("rollout-prompts", 0);
    let prompts: Vec<Prompt> = (0..cfg.batch_size)
        .map(|_| train[pick.random_range(0..train.len())].prompt)
        .collect();
    let sampling = Sampling::Temperature(cfg.temperature);
    let chunks: Vec<(usize, &[Prompt])> = prompts
        .chunks(ROLLOUT_CHUNK)
        .enumerate()
        .map(|(c, p)| (c * ROLLOUT_CHUNK, p))
        .collect();
    let sampled = chunks
        .par_iter()
        .map(|&(offset, chunk)| {
            let toks: Vec<Vec<usize>> = chunk.iter().map(|p| p.tokens().collect()).collect();
            let mut rngs: Vec<StreamRng> = (0..chunk.len())
                .map(|i| seeds.rng("episode", (offset + i) as u64))
                .collect();
            policy.sample_batch(&toks, cfg.completion_len, sampling, &mut rngs)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut completions = Vec::with_capacity(cfg.batch_size);
    let mut logprobs = Vec::with_capacity(cfg.batch_size);
    for c in sampled {
        completions.extend(c.tokens);
        logprobs.extend(
            c.logprobs
                .into_iter()
                .map(|l| l.into_iter().map(f64::from).collect::<Vec<f64>>()),
        );
    }

    let seqs: Vec<Vec<usize>> = prompts
        .iter()
        .zip(&completions)
        .map(|(p, c)| p.tokens().chain(c.iter().copied()).collect())
        .collect();
    let (ref_logprobs, _) = score_sequences(reference, &seqs, cfg.completion_len)?;
    let (_, values) = score_sequences(policy, &seqs, cfg.completion_len)?;
    let values = values.expect("value head checked above");

    let targets: Vec<bool> = prompts.iter().map(|p| task.target(p)).collect();
    let rewards: Vec<f64> = prompts
        .iter()
        .zip(&completions)
        .zip(&targets)
        .map(|((p, c), &t)| reward.gated(t, p, &digits(c)))
        .collect();
    let shaped = (0..prompts.len())
        .map(|i| {
            let mut r: Vec<f64> = logprobs[i]
                .iter()
                .zip(&ref_logprobs[i])
                .map(|(a, b)| -beta * (a - b))
                .collect();
            *r.last_mut().expect("completion_len >= 2") += rewards[i];
            r
        })
        .collect();
    let all_finite = logprobs
        .iter()
        .chain(&ref_logprobs)
        .chain(&values)
        .flatten()
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(PpoError::NonFinite {
            what: "rollout log-prob or value",
            iteration: 0,
        });
    }
    Ok(RolloutBatch {
        prompts,
        targets,
        completions,
        logprobs,
        ref_logprobs,
        values,
        rewards,
        shaped,
        beta,
    })
}

/// Generalized advantage estimation for one episode; the value beyond the
/// terminal step is zero. Returns `(advantages, returns)`.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(PpoError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Rescales to mean 0, std 1 (population std); constant inputs become zeros.
pub fn whiten(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = if std > 1e-12 { (*x - mean) / std } else { 0.0 };
    }
}

/// `beta * (1 + clip((kl - target)/target, -0.2, 0.2) * batch/horizon)`.
pub fn adaptive_kl_update(beta: f64, observed_kl: f64, cfg: &PpoConfig) -> f64 {
    let e = ((observed_kl - cfg.target_kl) / cfg.target_kl).clamp(-0.2, 0.2);
    beta * (1.0 + e * cfg.batch_size as f64 / cfg.horizon)
}

/// Averages over all minibatch steps of one [`ppo_update`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
}

/// Per-episode advantages (whitened over the whole batch) and returns.
pub fn batch_advantages(batch: &RolloutBatch, cfg: &PpoConfig) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut advs = Vec::with_capacity(batch.len());
    let mut rets = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let (a, r) = compute_gae(&batch.shaped[i], &batch.values[i], cfg.gamma, cfg.gae_lambda)?;
        advs.push(a);
        rets.push(r);
    }
    let mut flat: Vec<f64> = advs.iter().flatten().copied().collect();
    whiten(&mut flat);
    let k = cfg.completion_len;
    let advs = flat.chunks(k).map(<[f64]>::to_vec).collect();
    Ok((advs, rets))
}

/// Loss terms recorded by [`ppo_loss`].
#[derive(Debug, Clone)]
pub struct PpoLoss {
    /// Scalar node to differentiate.
    pub total: crate::numerics::Var,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// `exp(logπ_new − logπ_old)` per completion token.
    pub ratios: Vec<f64>,
}

/// The clipped PPO objective plus `vf_coef` times the value loss for a set
/// of episodes, recorded on `g`.
pub fn ppo_loss<E: Element>(
    g: &mut Graph<'_, E>,
    policy: &PolicyModel<E>,
    seqs: &[Vec<usize>],
    old_logprobs: &[&[f64]],
    advantages: &[&[f64]],
    returns: &[&[f64]],
    cfg: &PpoConfig,
) -> Result<PpoLoss> {
    let k = cfg.completion_len;
    let inputs: Vec<Vec<usize>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let batch = TokenBatch::from_rows(&inputs)?;
    let len = batch.len;
    let start = len - k;
    let out = policy.forward(g, &batch)?;
    let lp = g.log_softmax(out.logits)?;
    let picks: Vec<(usize, usize)> = seqs
        .iter()
        .enumerate()
        .flat_map(|(b, s)| (0..k).map(move |j| (b * len + start + j, s[start + j + 1])))
        .collect();
    let new_lp = g.gather(lp, &picks)?;
    let flat = |xs: &[&[f64]]| -> Vec<E> { xs.iter().flat_map(|l| l.iter().map(|&v| E::from_f64(v))).collect() };
    let (old, adv, ret) = (flat(old_logprobs), flat(advantages), flat(returns));
    let old = g.input(Tensor::from_vec(old));
    let adv = g.input(Tensor::from_vec(adv));
    let ret = g.input(Tensor::from_vec(ret));

    let diff = g.sub(new_lp, old)?;
    let ratio = g.exp(diff)?;
    let surr1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
    let surr2 = g.mul(clipped, adv)?;
    let surr = g.minimum(surr1, surr2)?;
    let mean_surr = g.mean(surr)?;
    let policy_loss = g.scale(mean_surr, -1.0)?;

    let values = out.values.ok_or(PpoError::NoValueHead)?;
    let vpicks: Vec<(usize, usize)> = (0..seqs.len())
        .flat_map(|b| (0..k).map(move |j| (b, start + j)))
        .collect();
    let v = g.gather(values, &vpicks)?;
    let verr = g.sub(v, ret)?;
    let sq = g.square(verr)?;
    let value_loss = g.mean(sq)?;
    let scaled_v = g.scale(value_loss, cfg.vf_coef)?;
    let total = g.add(policy_loss, scaled_v)?;
    Ok(PpoLoss {
        total,
        policy_loss: g.value(policy_loss).item().as_f64(),
        value_loss: g.value(value_loss).item().as_f64(),
        ratios: g.value(ratio).data().iter().map(|r| r.as_f64()).collect(),
    })
}

/// `ppo_epochs` passes of shuffled minibatch updates over `batch`.
pub fn ppo_update(
    policy: &mut PolicyModel,
    opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats> {
    let (advs, rets) = batch_advantages(batch, cfg)?;
    let seqs = batch.full_sequences();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch_size) {
            let mb_seqs: Vec<Vec<usize>> = mb.iter().map(|&i| seqs[i].clone()).collect();
            let old: Vec<&[f64]> = mb.iter().map(|&i| batch.logprobs[i].as_slice()).collect();
            let a: Vec<&[f64]> = mb.iter().map(|&i| advs[i].as_slice()).collect();
            let r: Vec<&[f64]> = mb.iter().map(|&i| rets[i].as_slice()).collect();
            let (mut grads, pl, vl, ratios) = {
                let mut g = Graph::with_params(policy.params());
                let l = ppo_loss(&mut g, policy, &mb_seqs, &old, &a, &r, cfg)?;
                (g.backward(l.total)?, l.policy_loss, l.value_loss, l.ratios)
            };
            if !(pl.is_finite() && vl.is_finite()) {
                return Err(PpoError::NonFinite {
                    what: "PPO loss",
                    iteration: steps,
                });
            }
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            opt.step(policy.params_mut(), &grads);
            let n = ratios.len() as f64;
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.clip_frac += ratios.iter().filter(|r| (**r - 1.0).abs() > cfg.clip_eps).count() as f64 / n;
            stats.approx_kl += ratios.iter().map(|r| -r.ln()).sum::<f64>() / n;
            steps += 1;
        }
    }
    let s = steps as f64;
    stats.policy_loss /= s;
    stats.value_loss /= s;
    stats.clip_frac /= s;
    stats.approx_kl /= s;
    Ok(stats)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub beta: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let rows = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn final_reward(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mean_reward)
    }
}

/// Full PPO loop: collect, estimate advantages, update, adapt beta.
pub fn train(
    policy: &mut PolicyModel,
    reference: &PolicyModel,
    train_set: &[Example],
    task: SyntheticTask,
    reward: &RewardSpec<Prompt, [u8]>,
    cfg: &PpoConfig,
    seeds: &SeedTree,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if policy.config().max_seq_len < PROMPT_LEN + cfg.completion_len {
        return Err(PpoError::Config(format!(
            "max_seq_len {} cannot hold a {PROMPT_LEN}-token prompt and {}-token completion",
            policy.config().max_seq_len,
            cfg.completion_len
        )));
    }
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), policy.params());
    let mut beta = cfg.init_kl_coef;
    let mut log = TrainingLog::default();
    for it in 0..cfg.total_ppo_epochs {
        let iter_seeds = seeds.child("ppo-iteration", it as u64);
        let batch = collect_rollouts(policy, reference, train_set, task, reward, beta, cfg, &iter_seeds)
            .map_err(|e| match e {
                PpoError::NonFinite { what, .. } => PpoError::NonFinite { what, iteration: it },
                e => e,
            })?;
        let stats = ppo_update(policy, &mut opt, &batch, cfg, &mut iter_seeds.rng("minibatch-order", 0))
            .map_err(|e| match e {
                PpoError::NonFinite { what, .. } => PpoError::NonFinite { what, iteration: it },
                e => e,
            })?;
        let kl = batch.mean_kl();
        log.rows.push(LogRow {
            iteration: it,
            mean_reward: batch.mean_reward(),
            mean_kl: kl,
            beta,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            clip_frac: stats.clip_frac,
        });
        log::debug!(
            "ppo {task} it {it}: reward {:.3} kl {kl:.3} beta {beta:.4} clip {:.3}",
            batch.mean_reward(),
            stats.clip_frac
        );
        beta = adaptive_kl_update(beta, kl, cfg);
    }
    Ok(log)
}
