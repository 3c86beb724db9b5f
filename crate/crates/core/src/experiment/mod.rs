//! End-to-end hypothesis tests: pre-train and probe each task, fine-tune with
//! PPO for every (task, p, seed) condition, evaluate per test partition, and
//! summarize with the convergence filter, a logistic trend fit and rank
//! correlations.

pub mod plot;
pub mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stats::{logistic_fit, spearman, Correlation, FitConfig, FitPoint, FitResult};

use crate::mdlprobe::{task_mdl, MdlError, ProbeConfig, TaskMdl};
use crate::ppo::{digits, train, PpoConfig, PpoError, TrainingLog};
use crate::pretrain::{pretrain_lm, PretrainConfig, PretrainError};
use crate::reward::{synthetic_spec, RewardSpec, COMPLETION_LEN};
use crate::rng::{SeedTree, StreamRng};
use crate::taskgen::{Prompt, QuadDataset, Quadrant, SyntheticTask, TaskError, TestSet};
use crate::transformer::{ModelConfig, ModelError, PolicyModel, Sampling};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Mdl(#[from] MdlError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("test partition {0} is empty")]
    EmptyPartition(Quadrant),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("condition {task} p={p} seed={seed}: {source}")]
    Condition {
        task: SyntheticTask,
        p: f64,
        seed: u64,
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) type Result<T> = std::result::Result<T, ExperimentError>;

/// Default threshold on the neither-partition reward below which a run is
/// treated as not converged.
pub const CONVERGENCE_THRESHOLD: f64 = 0.8;

/// Everything a single condition needs besides (task, p, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub ppo: PpoConfig,
    pub n_train: usize,
    pub n_test_per_quadrant: usize,
    /// Completions sampled per test prompt.
    pub eval_samples: usize,
    pub convergence_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            ppo: PpoConfig::default(),
            n_train: 4096,
            n_test_per_quadrant: 512,
            eval_samples: 1,
            convergence_threshold: CONVERGENCE_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    /// A 2-layer width-64 model with a short pre-training phase and a faster
    /// PPO schedule; one condition takes a minute or two on one core.
    pub fn quick() -> Self {
        Self {
            model: ModelConfig {
                n_layers: 2,
                d_model: 64,
                n_heads: 4,
                d_ff: 256,
                ..ModelConfig::desk()
            },
            pretrain: PretrainConfig {
                steps: 300,
                ..PretrainConfig::default()
            },
            ppo: PpoConfig {
                lr: 3e-4,
                init_kl_coef: 0.02,
                total_ppo_epochs: 60,
                ..PpoConfig::default()
            },
            n_test_per_quadrant: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.probe.validate()?;
        self.ppo.validate()?;
        if self.n_train < 2 || self.n_test_per_quadrant == 0 || self.eval_samples == 0 {
            return Err(ExperimentError::Config(
                "n_train >= 2, n_test_per_quadrant >= 1 and eval_samples >= 1 required".into(),
            ));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold < 1.0) {
            return Err(ExperimentError::Config(format!(
                "convergence_threshold must be in (0, 1), got {}",
                self.convergence_threshold
            )));
        }
        Ok(())
    }
}

/// Anything that can complete digit prompts.
pub trait CompletionPolicy: Sync {
    /// One completion per prompt; `rngs[i]` drives prompt `i`.
    fn complete(&self, prompts: &[Prompt], rngs: &mut [StreamRng]) -> Result<Vec<Vec<u8>>>;
}

impl CompletionPolicy for PolicyModel {
    fn complete(&self, prompts: &[Prompt], rngs: &mut [StreamRng]) -> Result<Vec<Vec<u8>>> {
        let rows: Vec<Vec<usize>> = prompts.iter().map(|p| p.tokens().collect()).collect();
        let out = self.sample_batch(&rows, COMPLETION_LEN, Sampling::Temperature(1.0), rngs)?;
        Ok(out.tokens.iter().map(|t| digits(t)).collect())
    }
}

/// Emits the same completion for every prompt.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Vec<u8>);

impl CompletionPolicy for FixedPolicy {
    fn complete(&self, prompts: &[Prompt], _: &mut [StreamRng]) -> Result<Vec<Vec<u8>>> {
        Ok(vec![self.0.clone(); prompts.len()])
    }
}

/// Mean and sample standard deviation of per-prompt reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub mean: f64,
    pub std: f64,
}

const EVAL_CHUNK: usize = 256;

/// Samples `n_samples` completions per test prompt and scores them. A
/// prompt's reward is the average over its samples; the reported std is
/// over prompts.
pub fn evaluate(
    policy: &dyn CompletionPolicy,
    test: &TestSet,
    task: SyntheticTask,
    reward: &RewardSpec<Prompt, [u8]>,
    n_samples: usize,
    seeds: &SeedTree,
) -> Result<BTreeMap<Quadrant, PartitionStats>> {
    let n_samples = n_samples.max(1);
    let mut out = BTreeMap::new();
    for q in Quadrant::ALL {
        let prompts = test.get(q);
        if prompts.is_empty() {
            return Err(ExperimentError::EmptyPartition(q));
        }
        let label = format!("eval/{q}");
        let jobs: Vec<(usize, Prompt)> = prompts
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (0..n_samples).map(move |k| (i * n_samples + k, *p)))
            .collect();
        let scores = jobs
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let ps: Vec<Prompt> = chunk.iter().map(|(_, p)| *p).collect();
                let mut rngs: Vec<StreamRng> = chunk.iter().map(|(j, _)| seeds.rng(&label, *j as u64)).collect();
                let ys = policy.complete(&ps, &mut rngs)?;
                Ok(ps
                    .iter()
                    .zip(&ys)
                    .map(|(p, y)| reward.gated(task.target(p), p, y))
                    .collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let per_prompt: Vec<f64> = scores
            .chunks(n_samples)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let (mean, std) = crate::mdlprobe::mean_std(&per_prompt);
        out.insert(q, PartitionStats { mean, std });
    }
    Ok(out)
}

/// Outcome of one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: SyntheticTask,
    pub p: f64,
    pub seed: u64,
    pub partitions: BTreeMap<Quadrant, PartitionStats>,
    pub converged: bool,
    pub rel_mdl: f64,
    pub rel_mdl_std: f64,
}

impl EvalReport {
    pub fn mean(&self, q: Quadrant) -> f64 {
        self.partitions.get(&q).map_or(f64::NAN, |s| s.mean)
    }

    /// Mean reward over the two partitions where the features disagree.
    /// The partitions have equal size, so this is the pooled mean.
    pub fn disagreement_mean(&self) -> f64 {
        (self.mean(Quadrant::SOnly) + self.mean(Quadrant::TOnly)) / 2.0
    }
}

/// A pre-trained model with its probing results.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: SyntheticTask,
    pub model: PolicyModel,
    pub loss_curve: Vec<f64>,
    pub mdl: TaskMdl,
}

pub fn pretrain_seeds(master: u64, task: SyntheticTask) -> SeedTree {
    SeedTree::new(master).child(&format!("pretrain/{task}"), 0)
}

pub fn probe_seeds(master: u64, task: SyntheticTask) -> SeedTree {
    SeedTree::new(master).child(&format!("probe/{task}"), 0)
}

pub fn condition_seeds(master: u64, task: SyntheticTask, p: f64, seed: u64) -> SeedTree {
    SeedTree::new(master).child(&format!("condition/{task}/{p}"), seed)
}

/// Pre-trained model for `task`, without probing.
pub fn pretrain_task(
    task: SyntheticTask,
    cfg: &ExperimentConfig,
    master: u64,
) -> Result<(PolicyModel, Vec<f64>)> {
    let seeds = pretrain_seeds(master, task);
    let mut model = PolicyModel::init(cfg.model, seeds.child("init", 0).master())?;
    let curve = pretrain_lm(&mut model, task, &cfg.pretrain, &seeds)?;
    Ok((model, curve))
}

/// Pre-trains and probes one task. Shared by every condition of the task.
pub fn prepare_task(task: SyntheticTask, cfg: &ExperimentConfig, master: u64) -> Result<PreparedTask> {
    cfg.validate()?;
    let (model, loss_curve) = pretrain_task(task, cfg, master)?;
    let mdl = task_mdl(&model, task, &cfg.probe, &probe_seeds(master, task))?;
    log::info!(
        "{task}: MDL(t) {:.1} MDL(s) {:.1} relative {:.3}",
        mdl.target.mean_bits,
        mdl.spurious.mean_bits,
        mdl.rel_mdl
    );
    Ok(PreparedTask {
        task,
        model,
        loss_curve,
        mdl,
    })
}

/// One condition's report plus its PPO training log.
#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub report: EvalReport,
    pub log: TrainingLog,
    pub policy: PolicyModel,
}

/// Dataset for (task, p, seed); a pure function of the master seed.
pub fn condition_dataset(
    task: SyntheticTask,
    p: f64,
    seed: u64,
    cfg: &ExperimentConfig,
    master: u64,
) -> Result<QuadDataset> {
    let seeds = condition_seeds(master, task, p, seed);
    Ok(QuadDataset::build(
        task,
        p,
        cfg.n_train,
        cfg.n_test_per_quadrant,
        seeds.child("dataset", 0).master(),
    )?)
}

/// Builds datasets, fine-tunes a copy of the pre-trained model against the
/// frozen original, and evaluates on all four partitions.
pub fn run_condition(
    prepared: &PreparedTask,
    p: f64,
    seed: u64,
    cfg: &ExperimentConfig,
    master: u64,
) -> Result<ConditionRun> {
    let task = prepared.task;
    let wrap = |e: ExperimentError| ExperimentError::Condition {
        task,
        p,
        seed,
        source: Box::new(e),
    };
    (|| {
        cfg.validate()?;
        let seeds = condition_seeds(master, task, p, seed);
        let data = condition_dataset(task, p, seed, cfg, master)?;
        let reward = synthetic_spec();
        let mut policy = prepared.model.clone();
        let log = train(
            &mut policy,
            &prepared.model,
            &data.train,
            task,
            &reward,
            &cfg.ppo,
            &seeds.child("ppo", 0),
        )?;
        let partitions = evaluate(&policy, &data.test, task, &reward, cfg.eval_samples, &seeds.child("eval", 0))?;
        let converged = partitions[&Quadrant::Neither].mean >= cfg.convergence_threshold;
        Ok(ConditionRun {
            report: EvalReport {
                task,
                p,
                seed,
                partitions,
                converged,
                rel_mdl: prepared.mdl.rel_mdl,
                rel_mdl_std: prepared.mdl.rel_mdl_std,
            },
            log,
            policy,
        })
    })()
    .map_err(wrap)
}

/// A report excluded by the convergence filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub task: SyntheticTask,
    pub p: f64,
    pub seed: u64,
    pub neither_reward: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Filtered {
    pub kept: Vec<EvalReport>,
    pub discarded: Vec<Discarded>,
}

/// Keeps reports whose neither-partition reward reaches `threshold`. Every
/// excluded report is logged and listed in `discarded`.
pub fn filter_converged(reports: &[EvalReport], threshold: f64) -> Filtered {
    let mut out = Filtered::default();
    for r in reports {
        let neither = r.mean(Quadrant::Neither);
        if neither >= threshold {
            out.kept.push(r.clone());
        } else {
            log::warn!(
                "excluding {} p={} seed={}: neither reward {neither:.3} < {threshold}",
                r.task,
                r.p,
                r.seed
            );
            out.discarded.push(Discarded {
                task: r.task,
                p: r.p,
                seed: r.seed,
                neither_reward: neither,
                threshold,
            });
        }
    }
    out
}

/// Spearman correlation of p against s-only reward for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceStat {
    pub task: SyntheticTask,
    pub n_runs: usize,
    pub distinct_p: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

/// Minimum number of distinct evidence levels for a rank test.
pub const MIN_DISTINCT_P: usize = 4;

/// Per-task rank correlation over runs, with a permutation p-value.
pub fn evidence_stats(reports: &[EvalReport], permutations: usize, seed: u64) -> Vec<EvidenceStat> {
    let mut by_task: BTreeMap<SyntheticTask, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_task.entry(r.task).or_default().push(r);
    }
    by_task
        .into_iter()
        .map(|(task, rs)| {
            let ps: Vec<f64> = rs.iter().map(|r| r.p).collect();
            let ys: Vec<f64> = rs.iter().map(|r| r.mean(Quadrant::SOnly)).collect();
            let mut distinct = ps.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let mut stat = EvidenceStat {
                task,
                n_runs: rs.len(),
                distinct_p: distinct.len(),
                rho: None,
                p_value: None,
                note: None,
            };
            if distinct.len() < MIN_DISTINCT_P {
                stat.note = Some(format!("needs at least {MIN_DISTINCT_P} distinct p values"));
                return stat;
            }
            let mut rng = SeedTree::new(seed).rng(&format!("evidence/{task}"), 0);
            let c = stats::permutation_test(&ps, &ys, spearman, permutations, &mut rng);
            stat.rho = c.coefficient;
            stat.p_value = c.p_value;
            if c.coefficient.is_none() {
                stat.note = Some("constant rewards; rank correlation undefined".into());
            }
            stat
        })
        .collect()
}

/// Runs at `p = 0` as fit points: x = relative MDL, y = disagreement reward.
pub fn fit_points(reports: &[EvalReport]) -> Vec<FitPoint> {
    reports
        .iter()
        .filter(|r| r.p == 0.0)
        .map(|r| FitPoint {
            group: r.task.name().to_string(),
            x: r.rel_mdl,
            y: r.disagreement_mean(),
        })
        .collect()
}

/// Grid of conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub tasks: Vec<SyntheticTask>,
    pub ps: Vec<f64>,
    pub seeds: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            tasks: SyntheticTask::ALL.to_vec(),
            ps: vec![0.0, 0.01, 0.05, 0.1, 0.25, 0.5],
            seeds: 3,
        }
    }
}

impl SweepGrid {
    /// Conditions in (task, p, seed) order.
    pub fn conditions(&self) -> Vec<(SyntheticTask, f64, u64)> {
        let mut out = Vec::new();
        for &t in &self.tasks {
            for &p in &self.ps {
                for s in 0..self.seeds {
                    out.push((t, p, s));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.ps.is_empty() || self.seeds == 0 {
            return Err(ExperimentError::Config("sweep grid must be non-empty".into()));
        }
        if let Some(p) = self.ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ExperimentError::Config(format!("p must be in [0, 1], got {p}")));
        }
        Ok(())
    }
}

/// A condition that failed; the sweep records it and moves on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tombstone {
    pub task: SyntheticTask,
    pub p: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub mdl: Vec<TaskMdl>,
    pub runs: Vec<ConditionRun>,
    pub failures: Vec<Tombstone>,
    pub filtered: Filtered,
    pub fit: std::result::Result<FitResult, String>,
    pub evidence: Vec<EvidenceStat>,
}

impl SweepOutcome {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// Statistics computed from a finished set of reports.
pub fn summarize(
    reports: &[EvalReport],
    threshold: f64,
    fit_cfg: &FitConfig,
) -> (Filtered, std::result::Result<FitResult, String>, Vec<EvidenceStat>) {
    let filtered = filter_converged(reports, threshold);
    let fit = logistic_fit(&fit_points(&filtered.kept), fit_cfg).map_err(|e| e.to_string());
    let evidence = evidence_stats(&filtered.kept, fit_cfg.permutations, fit_cfg.seed);
    (filtered, fit, evidence)
}

/// Pre-trains and probes every task of the grid (in parallel). Failures are
/// kept as messages so the affected conditions can be tombstoned.
pub fn prepare_tasks(
    tasks: &[SyntheticTask],
    cfg: &ExperimentConfig,
    master: u64,
) -> Vec<(SyntheticTask, std::result::Result<PreparedTask, String>)> {
    tasks
        .par_iter()
        .map(|&t| (t, prepare_task(t, cfg, master).map_err(|e| e.to_string())))
        .collect()
}

/// Runs the whole grid. Tasks are prepared once; conditions run on the
/// rayon pool and are merged back in (task, p, seed) order.
pub fn sweep(
    grid: &SweepGrid,
    cfg: &ExperimentConfig,
    fit_cfg: &FitConfig,
    master: u64,
) -> Result<SweepOutcome> {
    grid.validate()?;
    cfg.validate()?;
    let prepared = prepare_tasks(&grid.tasks, cfg, master);
    sweep_prepared(grid, cfg, fit_cfg, master, &prepared)
}

/// [`sweep`] with the per-task preparation already done.
pub fn sweep_prepared(
    grid: &SweepGrid,
    cfg: &ExperimentConfig,
    fit_cfg: &FitConfig,
    master: u64,
    prepared: &[(SyntheticTask, std::result::Result<PreparedTask, String>)],
) -> Result<SweepOutcome> {
    grid.validate()?;
    cfg.validate()?;
    let lookup: BTreeMap<SyntheticTask, &std::result::Result<PreparedTask, String>> =
        prepared.iter().map(|(t, r)| (*t, r)).collect();
    let results: Vec<std::result::Result<ConditionRun, Tombstone>> = grid
        .conditions()
        .into_par_iter()
        .map(|(task, p, seed)| {
            let tomb = |error: String| Tombstone { task, p, seed, error };
            match lookup.get(&task) {
                Some(Ok(prep)) => {
                    let r = run_condition(prep, p, seed, cfg, master).map_err(|e| tomb(e.to_string()));
                    match &r {
                        Ok(run) => log::info!(
                            "{task} p={p} seed={seed}: s_only {:.3} t_only {:.3} both {:.3} neither {:.3}",
                            run.report.mean(Quadrant::SOnly),
                            run.report.mean(Quadrant::TOnly),
                            run.report.mean(Quadrant::Both),
                            run.report.mean(Quadrant::Neither)
                        ),
                        Err(t) => log::error!("{task} p={p} seed={seed} failed: {}", t.error),
                    }
                    r
                }
                Some(Err(e)) => Err(tomb(format!("pre-training or probing failed: {e}"))),
                None => Err(tomb("task was not prepared".into())),
            }
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(t) => failures.push(t),
        }
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    let (filtered, fit, evidence) = summarize(&reports, cfg.convergence_threshold, fit_cfg);
    let mut mdl: Vec<TaskMdl> = prepared
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|p| p.mdl.clone()))
        .collect();
    mdl.sort_by_key(|m| m.task);
    Ok(SweepOutcome {
        mdl,
        runs,
        failures,
        filtered,
        fit,
        evidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepRow {
    task: SyntheticTask,
    p: f64,
    seed: u64,
    partition: Quadrant,
    mean_reward: f64,
    std_reward: f64,
    converged: bool,
    rel_mdl: f64,
    rel_mdl_std: f64,
}

/// `task,p,seed,partition,mean_reward,std_reward,converged,rel_mdl,rel_mdl_std`
pub fn write_sweep_csv(out: impl Write, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for (q, s) in &r.partitions {
            w.serialize(SweepRow {
                task: r.task,
                p: r.p,
                seed: r.seed,
                partition: *q,
                mean_reward: s.mean,
                std_reward: s.std,
                converged: r.converged,
                rel_mdl: r.rel_mdl,
                rel_mdl_std: r.rel_mdl_std,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_sweep_csv`]; reports come back in file order.
pub fn read_sweep_csv(input: impl std::io::Read) -> Result<Vec<EvalReport>> {
    let mut out: Vec<EvalReport> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<SweepRow>() {
        let row = row?;
        let stats = PartitionStats {
            mean: row.mean_reward,
            std: row.std_reward,
        };
        match out.last_mut() {
            Some(r) if r.task == row.task && r.p == row.p && r.seed == row.seed => {
                r.partitions.insert(row.partition, stats);
            }
            _ => out.push(EvalReport {
                task: row.task,
                p: row.p,
                seed: row.seed,
                partitions: BTreeMap::from([(row.partition, stats)]),
                converged: row.converged,
                rel_mdl: row.rel_mdl,
                rel_mdl_std: row.rel_mdl_std,
            }),
        }
    }
    Ok(out)
}

pub fn write_failures_csv(out: impl Write, failures: &[Tombstone]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if failures.is_empty() {
        w.write_record(["task", "p", "seed", "error"])?;
    }
    for f in failures {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Nested summary written next to the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total: usize,
    pub kept: usize,
    pub discarded: Vec<Discarded>,
    pub failures: usize,
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
    pub evidence: Vec<EvidenceStat>,
}

impl SweepSummary {
    pub fn new(
        total: usize,
        failures: usize,
        filtered: &Filtered,
        fit: &std::result::Result<FitResult, String>,
        evidence: &[EvidenceStat],
    ) -> Self {
        Self {
            total,
            kept: filtered.kept.len(),
            discarded: filtered.discarded.clone(),
            failures,
            fit: fit.as_ref().ok().cloned(),
            fit_error: fit.as_ref().err().cloned(),
            evidence: evidence.to_vec(),
        }
    }
}

/// Mean reward over seeds per (task, partition, p), in grid order.
pub fn mean_curves(reports: &[EvalReport]) -> BTreeMap<SyntheticTask, BTreeMap<Quadrant, Vec<(f64, f64)>>> {
    let mut acc: BTreeMap<(SyntheticTask, Quadrant), Vec<(f64, f64, usize)>> = BTreeMap::new();
    for r in reports {
        for (q, s) in &r.partitions {
            let v = acc.entry((r.task, *q)).or_default();
            match v.iter_mut().find(|e| e.0 == r.p) {
                Some(e) => {
                    e.1 += s.mean;
                    e.2 += 1;
                }
                None => v.push((r.p, s.mean, 1)),
            }
        }
    }
    let mut out: BTreeMap<SyntheticTask, BTreeMap<Quadrant, Vec<(f64, f64)>>> = BTreeMap::new();
    for ((t, q), mut v) in acc {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.entry(t)
            .or_default()
            .insert(q, v.into_iter().map(|(p, sum, n)| (p, sum / n as f64)).collect());
    }
    out
}

/// One reward-vs-p chart per task.
pub fn reward_charts(reports: &[EvalReport]) -> Vec<(SyntheticTask, plot::Chart)> {
    mean_curves(reports)
        .into_iter()
        .map(|(task, curves)| {
            let chart = plot::Chart {
                title: format!("{task}: mean test reward"),
                x_label: "s-only rate p".into(),
                y_label: "reward".into(),
                log_x: false,
                series: curves
                    .into_iter()
                    .map(|(q, points)| plot::Series {
                        name: q.to_string(),
                        points,
                        line: true,
                    })
                    .collect(),
            };
            (task, chart)
        })
        .collect()
}

/// Scatter of the fit points with the fitted curve.
pub fn fit_chart(points: &[FitPoint], fit: Option<&FitResult>) -> plot::Chart {
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        groups.entry(&p.group).or_default().push((p.x, p.y));
    }
    let mut series: Vec<plot::Series> = groups
        .into_iter()
        .map(|(g, pts)| plot::Series {
            name: g.to_string(),
            points: pts,
            line: false,
        })
        .collect();
    if let Some(f) = fit {
        let (lo, hi) = points
            .iter()
            .filter(|p| p.x > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.x), h.max(p.x)));
        if lo.is_finite() && hi > lo {
            let curve = (0..=60)
                .map(|i| {
                    let x = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 60.0).exp();
                    (x, f.predict(x))
                })
                .collect();
            series.push(plot::Series {
                name: "logistic fit".into(),
                points: curve,
                line: true,
            });
        }
    }
    plot::Chart {
        title: "reward on s-only and t-only at p = 0".into(),
        x_label: "relative MDL (log scale)".into(),
        y_label: "reward".into(),
        log_x: true,
        series,
    }
}
