//! Feature extractability as prequential (online-coding) description length
//! of a linear probe on frozen representations.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;
use crate::taskgen::{sample_quadrant, Quadrant, SyntheticTask, TaskError, PROMPT_LEN};
use crate::transformer::{ModelError, PolicyModel, TokenBatch};

#[derive(Debug, thiserror::Error)]
pub enum MdlError {
    #[error("dataset of {0} examples is too small for a block schedule (need at least 4)")]
    TooSmall(usize),
    #[error("{reps} representations but {labels} labels")]
    LengthMismatch { reps: usize, labels: usize },
    #[error("representations are ragged or empty")]
    BadRepresentations,
    #[error("relative MDL undefined: denominator mean is {0}")]
    ZeroDenominator(f64),
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, MdlError>;

/// Per-example probability floor inside `-log2 p`.
pub const PROB_FLOOR: f64 = 1e-7;

/// Which feature a probe dataset encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Target,
    Spurious,
}

impl Feature {
    /// `(negative, positive)` source quadrants. The target is probed on
    /// s-only vs both, the spurious feature on neither vs s-only.
    pub fn sources(self) -> (Quadrant, Quadrant) {
        match self {
            Feature::Target => (Quadrant::SOnly, Quadrant::Both),
            Feature::Spurious => (Quadrant::Neither, Quadrant::SOnly),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Target => "target",
            Feature::Spurious => "spurious",
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Full-batch gradient steps per block.
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Examples in a probe dataset (half per class).
    pub n: usize,
    pub seeds: usize,
    /// Charge each block the cheaper of the probe code and the uniform code,
    /// plus one bit to say which was used.
    pub uniform_escape: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.1,
            weight_decay: 1e-4,
            n: 2048,
            seeds: 5,
            uniform_escape: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(MdlError::Config(format!("n must be even and >= 4, got {}", self.n)));
        }
        if self.seeds == 0 {
            return Err(MdlError::Config("seeds must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(MdlError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Block boundaries `t1 < t2 < ... = n`: `t1 = max(2, ceil(n/1000))`, then
/// doubling, with the last boundary clamped to `n`.
pub fn block_schedule(n: usize) -> Result<Vec<usize>> {
    if n < 4 {
        return Err(MdlError::TooSmall(n));
    }
    let mut b = vec![2.max(n.div_ceil(1000))];
    while *b.last().unwrap() < n {
        let next = (b.last().unwrap() * 2).min(n);
        b.push(next);
    }
    Ok(b)
}

/// Affine two-way softmax probe, trained by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    dim: usize,
    /// `[dim, 2]` row-major
    w: Vec<f64>,
    b: [f64; 2],
}

impl LinearProbe {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        let w = (0..dim * 2)
            .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { dim, w, b: [0.0; 2] }
    }

    fn logits(&self, x: &[f64]) -> [f64; 2] {
        let mut z = self.b;
        for (i, &xi) in x.iter().enumerate() {
            z[0] += xi * self.w[2 * i];
            z[1] += xi * self.w[2 * i + 1];
        }
        z
    }

    /// `P(y = 1 | x)`.
    pub fn prob_one(&self, x: &[f64]) -> f64 {
        let z = self.logits(x);
        1.0 / (1.0 + (z[0] - z[1]).exp())
    }

    pub fn fit(&mut self, xs: &[Vec<f64>], ys: &[bool], steps: usize, lr: f64, weight_decay: f64) {
        let n = xs.len() as f64;
        let mut gw = vec![0.0; self.w.len()];
        for _ in 0..steps {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = [0.0; 2];
            for (x, &y) in xs.iter().zip(ys) {
                let p1 = self.prob_one(x);
                // d(CE)/dz = p - onehot
                let d1 = p1 - if y { 1.0 } else { 0.0 };
                let d0 = -d1;
                gb[0] += d0;
                gb[1] += d1;
                for (i, &xi) in x.iter().enumerate() {
                    gw[2 * i] += d0 * xi;
                    gw[2 * i + 1] += d1 * xi;
                }
            }
            for (w, g) in self.w.iter_mut().zip(&gw) {
                *w -= lr * (g / n + weight_decay * *w);
            }
            for k in 0..2 {
                self.b[k] -= lr * gb[k] / n;
            }
        }
    }

    /// Codelength of `ys` given `xs` in bits, with the probability floor.
    pub fn bits(&self, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| {
                let p1 = self.prob_one(x);
                let p = if y { p1 } else { 1.0 - p1 };
                -p.max(PROB_FLOOR).log2()
            })
            .sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Prequential codelength in bits. The data is shuffled with `seed`; the
/// first block costs one bit per label, and each later block is coded by a
/// warm-started probe trained on everything before it.
pub fn prequential_mdl(
    reps: &[Vec<f64>],
    labels: &[bool],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if reps.len() != labels.len() {
        return Err(MdlError::LengthMismatch {
            reps: reps.len(),
            labels: labels.len(),
        });
    }
    let n = reps.len();
    let schedule = block_schedule(n)?;
    let dim = reps.first().map_or(0, Vec::len);
    if dim == 0 || reps.iter().any(|r| r.len() != dim) {
        return Err(MdlError::BadRepresentations);
    }
    let seeds = SeedTree::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds.rng("probe-shuffle", 0));
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| reps[i].clone()).collect();
    let ys: Vec<bool> = order.iter().map(|&i| labels[i]).collect();

    let mut probe = LinearProbe::new(dim, &mut seeds.rng("probe-init", 0));
    let mut total = schedule[0] as f64;
    for w in schedule.windows(2) {
        let (seen, end) = (w[0], w[1]);
        probe.fit(&xs[..seen], &ys[..seen], cfg.steps, cfg.lr, cfg.weight_decay);
        let bits = probe.bits(&xs[seen..end], &ys[seen..end]);
        total += if cfg.uniform_escape {
            bits.min((end - seen) as f64) + 1.0
        } else {
            bits
        };
    }
    Ok(total)
}

/// Per-seed codelengths with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlReport {
    pub task: String,
    pub feature: Feature,
    pub per_seed_bits: Vec<f64>,
    pub mean_bits: f64,
    pub std_bits: f64,
}

impl MdlReport {
    pub fn from_bits(task: impl Into<String>, feature: Feature, bits: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&bits);
        Self {
            task: task.into(),
            feature,
            per_seed_bits: bits,
            mean_bits: mean,
            std_bits: std,
        }
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(std::io::Error::from)?;
        Ok(())
    }
}

/// Mean and sample (n-1) standard deviation; the std of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `MDL(s)/MDL(t)` with first-order error propagation.
pub fn relative_mdl(report_s: &MdlReport, report_t: &MdlReport) -> Result<(f64, f64)> {
    ratio_with_error(
        report_s.mean_bits,
        report_s.std_bits,
        report_t.mean_bits,
        report_t.std_bits,
    )
}

pub fn ratio_with_error(mu_s: f64, sd_s: f64, mu_t: f64, sd_t: f64) -> Result<(f64, f64)> {
    if mu_t == 0.0 || !mu_t.is_finite() {
        return Err(MdlError::ZeroDenominator(mu_t));
    }
    let r = mu_s / mu_t;
    let rel_s = if mu_s == 0.0 { 0.0 } else { sd_s / mu_s };
    let sigma = r.abs() * (rel_s.powi(2) + (sd_t / mu_t).powi(2)).sqrt();
    Ok((r, sigma))
}

/// Balanced probe dataset for `feature`: `n/2` prompts from each source quadrant.
pub fn probe_prompts(
    task: SyntheticTask,
    feature: Feature,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Vec<usize>>, Vec<bool>)> {
    let (neg, pos) = feature.sources();
    let mut prompts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (q, label) in [(neg, false), (pos, true)] {
        for _ in 0..n / 2 {
            prompts.push(sample_quadrant(task, q, rng)?.tokens().collect());
            labels.push(label);
        }
    }
    Ok((prompts, labels))
}

/// Final-layer representation at the last prompt token, in chunks.
pub fn representations(model: &PolicyModel, prompts: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 256;
    let layer = model.config().n_layers;
    let mut out = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(CHUNK) {
        let batch = TokenBatch::from_rows(chunk)?;
        let h = model.hidden_at(&batch, layer, PROMPT_LEN - 1)?;
        for r in 0..h.rows() {
            out.push(h.row(r).iter().map(|&v| v as f64).collect());
        }
    }
    Ok(out)
}

/// MDL of one feature over `cfg.seeds` probe seeds (run in parallel).
pub fn feature_mdl(
    model: &PolicyModel,
    task: SyntheticTask,
    feature: Feature,
    cfg: &ProbeConfig,
    seeds: &SeedTree,
) -> Result<MdlReport> {
    cfg.validate()?;
    let (prompts, labels) = probe_prompts(
        task,
        feature,
        cfg.n,
        &mut seeds.rng(&format!("probe-data/{}", feature.name()), 0),
    )?;
    let reps = representations(model, &prompts)?;
    let bits = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let seed = seeds.child(&format!("probe-seed/{}", feature.name()), s).master();
            prequential_mdl(&reps, &labels, cfg, seed)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MdlReport::from_bits(task.name(), feature, bits))
}

/// Both features' reports for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMdl {
    pub task: SyntheticTask,
    pub target: MdlReport,
    pub spurious: MdlReport,
    pub rel_mdl: f64,
    pub rel_mdl_std: f64,
}

pub fn task_mdl(
    model: &PolicyModel,
    task: SyntheticTask,
    cfg: &ProbeConfig,
    seeds: &SeedTree,
) -> Result<TaskMdl> {
    let target = feature_mdl(model, task, Feature::Target, cfg, seeds)?;
    let spurious = feature_mdl(model, task, Feature::Spurious, cfg, seeds)?;
    let (rel_mdl, rel_mdl_std) = relative_mdl(&spurious, &target)?;
    Ok(TaskMdl {
        task,
        target,
        spurious,
        rel_mdl,
        rel_mdl_std,
    })
}

#[derive(Debug, Serialize)]
struct RelRow<'a> {
    task: &'a str,
    mdl_s: f64,
    mdl_s_std: f64,
    mdl_t: f64,
    mdl_t_std: f64,
    rel_mdl: f64,
    rel_mdl_std: f64,
}

/// `task,mdl_s,mdl_s_std,mdl_t,mdl_t_std,rel_mdl,rel_mdl_std`
pub fn write_relative_csv<'a, W: Write>(
    out: W,
    rows: impl IntoIterator<Item = &'a TaskMdl>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(RelRow {
            task: r.task.name(),
            mdl_s: r.spurious.mean_bits,
            mdl_s_std: r.spurious.std_bits,
            mdl_t: r.target.mean_bits,
            mdl_t_std: r.target.std_bits,
            rel_mdl: r.rel_mdl,
            rel_mdl_std: r.rel_mdl_std,
        })?;
    }
    w.flush()?;
    Ok(())
}
