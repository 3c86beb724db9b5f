//! The `biasbench` command line: argument parsing, run directories and the
//! subcommands that drive the library.

pub mod checkpoint;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{load_model, save_model, Checkpoint};
pub use config::{parse_config, RunConfig};

use crate::experiment::{
    self, condition_dataset, condition_seeds, evaluate, fit_chart, fit_points, pretrain_task, probe_seeds,
    reward_charts, run_condition, summarize, EvalReport, ExperimentError, PreparedTask, SweepSummary,
};
use crate::mdlprobe::{task_mdl, write_relative_csv, MdlError, TaskMdl};
use crate::ppo::{PpoError, TrainingLog};
use crate::pretrain::PretrainError;
use crate::reward::synthetic_spec;
use crate::rng::SeedTree;
use crate::taskgen::{write_examples_csv, Example, Quadrant, SyntheticTask, TaskError};
use crate::textfeatures::{build_text_dataset, read_corpus, write_text_csv, TextError, TextTask, Word, WhitespaceTokenizer};
use crate::transformer::{ModelError, PolicyModel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdl(#[from] MdlError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io(_) => "io",
            CliError::Json(_) | CliError::Csv(_) => "serialization",
            CliError::Experiment(_) => "experiment",
            CliError::Task(_) => "task",
            CliError::Text(_) => "text",
            CliError::Model(_) => "model",
            CliError::Mdl(_) => "probe",
            CliError::Ppo(_) => "ppo",
            CliError::Pretrain(_) => "pretrain",
        }
    }

    /// Single-line JSON for scripts reading stderr.
    pub fn machine_line(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.bbck"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.csv"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(format!("{name}.svg"))
    }

    pub fn pretrained(&self, task: SyntheticTask) -> PathBuf {
        self.checkpoint(&format!("pretrained-{task}"))
    }

    pub fn mdl(&self, task: SyntheticTask) -> PathBuf {
        self.report(&format!("mdl-{task}.json"))
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.report("sweep.csv")
    }
}

pub fn condition_key(task: SyntheticTask, p: f64, run: u64) -> String {
    format!("{task}-p{p}-r{run}")
}

#[derive(Debug, Parser)]
#[command(name = "biasbench", version, about = "Inductive-bias testbed for PPO fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small fast preset instead of the defaults when no
    /// config file is given.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Condition {
    #[arg(long)]
    pub task: Option<SyntheticTask>,
    /// Fraction of s-only training examples.
    #[arg(long)]
    pub p: Option<f64>,
    /// Fine-tuning run index.
    #[arg(long)]
    pub run: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the training and test prompts of one condition.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cond: Condition,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Build a quadrant-labelled text dataset from a corpus.
    Textgen {
        #[command(flatten)]
        common: Common,
        /// One example per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        text_task: Option<TextTask>,
        #[arg(long, value_parser = parse_word)]
        word: Option<Word>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Pre-train the language model of one task.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<SyntheticTask>,
    },
    /// MDL of the target and spurious features; `--task all` probes every task.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_task_or_all)]
        task: Vec<TaskSelection>,
    },
    /// Fine-tune with PPO and evaluate.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cond: Condition,
    },
    /// Re-evaluate a fine-tuned checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cond: Condition,
    },
    /// Run the whole task × p × seed grid and summarize.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute summary statistics and plots from a sweep table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Sweep CSV; defaults to the run directory's table.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelection {
    All,
    One(SyntheticTask),
}

fn parse_task_or_all(s: &str) -> std::result::Result<TaskSelection, String> {
    if s == "all" {
        Ok(TaskSelection::All)
    } else {
        s.parse().map(TaskSelection::One).map_err(|e: TaskError| e.to_string())
    }
}

fn parse_word(s: &str) -> std::result::Result<Word, String> {
    match s {
        "review" => Ok(Word::Review),
        "prompt" => Ok(Word::Prompt),
        _ => Err(format!("word must be review or prompt, got {s:?}")),
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Textgen { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Probe { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common }
            | Command::Report { common, .. } => common,
        }
    }
}

/// Config file (or preset), then command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None if common.quick => RunConfig::quick(0),
        None => RunConfig::new(0),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_condition(cfg: &mut RunConfig, cond: &Condition) {
    if let Some(t) = cond.task {
        cfg.task = t;
    }
    if let Some(p) = cond.p {
        cfg.p = p;
    }
    if let Some(r) = cond.run {
        cfg.run = r;
    }
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.machine_line());
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    let common = command.common().clone();
    let mut cfg = resolve_config(&common)?;
    let dir = RunDir::new(&common.out);
    match command {
        Command::Gen {
            cond, n_train, n_test, ..
        } => {
            apply_condition(&mut cfg, &cond);
            if let Some(n) = n_train {
                cfg.data.n_train = n;
            }
            if let Some(n) = n_test {
                cfg.data.n_test_per_quadrant = n;
            }
            start(&dir, &cfg)?;
            cmd_gen(&dir, &cfg)
        }
        Command::Textgen {
            corpus,
            text_task,
            word,
            p,
            n,
            ..
        } => {
            if let Some(c) = corpus {
                cfg.text.corpus = Some(c);
            }
            if let Some(t) = text_task {
                cfg.text.task = t;
            }
            if let Some(w) = word {
                cfg.text.word = w;
            }
            if let Some(p) = p {
                cfg.p = p;
            }
            if let Some(n) = n {
                cfg.text.n = n;
            }
            start(&dir, &cfg)?;
            cmd_textgen(&dir, &cfg)
        }
        Command::Pretrain { task, .. } => {
            if let Some(t) = task {
                cfg.task = t;
            }
            start(&dir, &cfg)?;
            cmd_pretrain(&dir, &cfg).map(|_| ())
        }
        Command::Probe { task, .. } => {
            let tasks = match task.as_slice() {
                [] => vec![cfg.task],
                sel if sel.contains(&TaskSelection::All) => SyntheticTask::ALL.to_vec(),
                sel => {
                    let mut ts: Vec<SyntheticTask> = sel
                        .iter()
                        .filter_map(|s| match s {
                            TaskSelection::One(t) => Some(*t),
                            TaskSelection::All => None,
                        })
                        .collect();
                    ts.sort();
                    ts.dedup();
                    ts
                }
            };
            start(&dir, &cfg)?;
            cmd_probe(&dir, &cfg, &tasks)
        }
        Command::Train { cond, .. } => {
            apply_condition(&mut cfg, &cond);
            start(&dir, &cfg)?;
            cmd_train(&dir, &cfg)
        }
        Command::Eval { cond, .. } => {
            apply_condition(&mut cfg, &cond);
            start(&dir, &cfg)?;
            cmd_eval(&dir, &cfg)
        }
        Command::Sweep { .. } => {
            start(&dir, &cfg)?;
            cmd_sweep(&dir, &cfg)
        }
        Command::Report { input, .. } => {
            cfg.validate()?;
            let input = input.unwrap_or_else(|| dir.sweep_csv());
            cmd_report(&dir, &cfg, &input)
        }
    }
}

/// Validates and snapshots the effective config into the run directory.
fn start(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    write_atomic(&dir.config(), cfg.to_toml()?.as_bytes())
}

fn cmd_gen(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let data = condition_dataset(cfg.task, cfg.p, cfg.run, &cfg.experiment(), cfg.seed)?;
    let key = condition_key(cfg.task, cfg.p, cfg.run);
    write_with(&dir.data(&format!("train-{key}.csv")), |b| {
        Ok(write_examples_csv(cfg.task, data.train.iter().copied(), b)?)
    })?;
    let test = Quadrant::ALL
        .iter()
        .flat_map(|&q| data.test.get(q).iter().map(move |&prompt| Example { prompt, quadrant: q }));
    write_with(&dir.data(&format!("test-{key}.csv")), |b| Ok(write_examples_csv(cfg.task, test, b)?))?;
    let counts = data.train_counts();
    println!(
        "{key}: train s_only {} both {} neither {} t_only {}; test {} per quadrant",
        counts[&Quadrant::SOnly],
        counts[&Quadrant::Both],
        counts[&Quadrant::Neither],
        counts[&Quadrant::TOnly],
        cfg.data.n_test_per_quadrant
    );
    Ok(())
}

fn cmd_textgen(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .text
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Usage("textgen needs --corpus or text.corpus".into()))?;
    let file = fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot read corpus {}: {e}", path.display())))?;
    let corpus = read_corpus(std::io::BufReader::new(file))?;
    let task = cfg.text.task;
    let seeds = SeedTree::new(cfg.seed).child(&format!("text/{task}/{}", cfg.p), 0);
    let rows = build_text_dataset(&corpus, task, cfg.text.word, cfg.p, cfg.text.n, &seeds, &WhitespaceTokenizer)?;
    let out = dir.data(&format!("text-{}-p{}.csv", slug(task.name()), cfg.p));
    write_with(&out, |b| Ok(write_text_csv(b, &rows)?))?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

fn cmd_pretrain(dir: &RunDir, cfg: &RunConfig) -> Result<PolicyModel> {
    let task = cfg.task;
    let (model, curve) = pretrain_task(task, &cfg.experiment(), cfg.seed)?;
    save_model(&dir.pretrained(task), &model)?;
    write_with(&dir.log(&format!("pretrain-{task}")), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["step", "loss"])?;
        for (i, l) in curve.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!(
        "{task}: loss {:.4} -> {:.4} over {} steps",
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN),
        curve.len()
    );
    Ok(model)
}

/// Cached pre-trained model for `cfg.task`, trained on first use.
fn pretrained(dir: &RunDir, cfg: &RunConfig) -> Result<PolicyModel> {
    let path = dir.pretrained(cfg.task);
    if path.exists() {
        let m = load_model(&path)?;
        if *m.config() == cfg.model {
            return Ok(m);
        }
        log::warn!("{} was built with a different model config; retraining", path.display());
    }
    cmd_pretrain(dir, cfg)
}

/// Cached probing result for `cfg.task`.
fn task_probe(dir: &RunDir, cfg: &RunConfig, model: &PolicyModel) -> Result<TaskMdl> {
    let path = dir.mdl(cfg.task);
    if path.exists() {
        return Ok(serde_json::from_slice(&fs::read(&path)?)?);
    }
    let mdl = task_mdl(model, cfg.task, &cfg.probe, &probe_seeds(cfg.seed, cfg.task))?;
    write_json(&path, &mdl)?;
    Ok(mdl)
}

fn cmd_probe(dir: &RunDir, cfg: &RunConfig, tasks: &[SyntheticTask]) -> Result<()> {
    let mut results = Vec::new();
    for &task in tasks {
        let tcfg = RunConfig { task, ..cfg.clone() };
        let model = pretrained(dir, &tcfg)?;
        let mdl = task_mdl(&model, task, &cfg.probe, &probe_seeds(cfg.seed, task))?;
        write_json(&dir.mdl(task), &mdl)?;
        println!(
            "{task}: MDL(t) {:.1} ± {:.1}  MDL(s) {:.1} ± {:.1}  relative {:.3} ± {:.3}",
            mdl.target.mean_bits, mdl.target.std_bits, mdl.spurious.mean_bits, mdl.spurious.std_bits, mdl.rel_mdl, mdl.rel_mdl_std
        );
        results.push(mdl);
    }
    write_with(&dir.report("relative_mdl.csv"), |b| Ok(write_relative_csv(b, &results)?))
}

fn prepared(dir: &RunDir, cfg: &RunConfig) -> Result<PreparedTask> {
    let model = pretrained(dir, cfg)?;
    let mdl = task_probe(dir, cfg, &model)?;
    Ok(PreparedTask {
        task: cfg.task,
        model,
        loss_curve: Vec::new(),
        mdl,
    })
}

fn write_log(path: &Path, log: &TrainingLog) -> Result<()> {
    write_with(path, |b| Ok(log.write_csv(b)?))
}

fn print_report(r: &EvalReport) {
    let parts: Vec<String> = r
        .partitions
        .iter()
        .map(|(q, s)| format!("{q} {:.3} ± {:.3}", s.mean, s.std))
        .collect();
    println!(
        "{} p={} run={}: {}{}",
        r.task,
        r.p,
        r.seed,
        parts.join("  "),
        if r.converged { "" } else { "  (not converged)" }
    );
}

fn cmd_train(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let prep = prepared(dir, cfg)?;
    let run = run_condition(&prep, cfg.p, cfg.run, &cfg.experiment(), cfg.seed)?;
    let key = condition_key(cfg.task, cfg.p, cfg.run);
    save_model(&dir.checkpoint(&format!("policy-{key}")), &run.policy)?;
    write_log(&dir.log(&format!("ppo-{key}")), &run.log)?;
    write_json(&dir.report(&format!("eval-{key}.json")), &run.report)?;
    print_report(&run.report);
    Ok(())
}

fn cmd_eval(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let key = condition_key(cfg.task, cfg.p, cfg.run);
    let path = dir.checkpoint(&format!("policy-{key}"));
    if !path.exists() {
        return Err(CliError::Usage(format!("no policy checkpoint at {}; run `train` first", path.display())));
    }
    let policy = load_model(&path)?;
    let model = pretrained(dir, cfg)?;
    let mdl = task_probe(dir, cfg, &model)?;
    let exp = cfg.experiment();
    let data = condition_dataset(cfg.task, cfg.p, cfg.run, &exp, cfg.seed)?;
    let seeds = condition_seeds(cfg.seed, cfg.task, cfg.p, cfg.run).child("eval", 0);
    let partitions = evaluate(&policy, &data.test, cfg.task, &synthetic_spec(), exp.eval_samples, &seeds)?;
    let converged = partitions[&Quadrant::Neither].mean >= exp.convergence_threshold;
    let report = EvalReport {
        task: cfg.task,
        p: cfg.p,
        seed: cfg.run,
        partitions,
        converged,
        rel_mdl: mdl.rel_mdl,
        rel_mdl_std: mdl.rel_mdl_std,
    };
    write_json(&dir.report(&format!("eval-{key}.json")), &report)?;
    print_report(&report);
    Ok(())
}

fn cmd_sweep(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let out = experiment::sweep(&cfg.sweep, &cfg.experiment(), &cfg.fit_config(), cfg.seed)?;
    for m in &out.mdl {
        write_json(&dir.mdl(m.task), m)?;
    }
    write_with(&dir.report("relative_mdl.csv"), |b| Ok(write_relative_csv(b, &out.mdl)?))?;
    for run in &out.runs {
        let r = &run.report;
        write_log(&dir.log(&format!("ppo-{}", condition_key(r.task, r.p, r.seed))), &run.log)?;
    }
    let reports = out.reports();
    write_with(&dir.sweep_csv(), |b| Ok(experiment::write_sweep_csv(b, &reports)?))?;
    write_with(&dir.report("failures.csv"), |b| Ok(experiment::write_failures_csv(b, &out.failures)?))?;
    emit_summary(dir, &reports, out.failures.len(), &out.filtered, &out.fit, &out.evidence)
}

fn emit_summary(
    dir: &RunDir,
    reports: &[EvalReport],
    failures: usize,
    filtered: &experiment::Filtered,
    fit: &std::result::Result<experiment::FitResult, String>,
    evidence: &[experiment::EvidenceStat],
) -> Result<()> {
    let summary = SweepSummary::new(reports.len() + failures, failures, filtered, fit, evidence);
    write_json(&dir.report("summary.json"), &summary)?;
    for (task, chart) in reward_charts(&filtered.kept) {
        write_atomic(&dir.plot(&format!("reward-{task}")), chart.to_svg().as_bytes())?;
    }
    let pts = fit_points(&filtered.kept);
    write_atomic(&dir.plot("fit"), fit_chart(&pts, fit.as_ref().ok()).to_svg().as_bytes())?;
    for r in reports {
        print_report(r);
    }
    println!(
        "{} reports, {} kept, {} discarded, {} failed",
        reports.len(),
        summary.kept,
        summary.discarded.len(),
        failures
    );
    match fit {
        Ok(f) => println!(
            "fit: slope {:.3} [{:.3}, {:.3}] intercept {:.3}",
            f.slope, f.slope_band.0, f.slope_band.1, f.intercept
        ),
        Err(e) => println!("fit: {e}"),
    }
    for e in evidence {
        match (e.rho, e.p_value) {
            (Some(r), Some(p)) => println!("{}: spearman {r:.3} (p = {p:.4})", e.task),
            _ => println!("{}: {}", e.task, e.note.as_deref().unwrap_or("undefined")),
        }
    }
    Ok(())
}

fn cmd_report(dir: &RunDir, cfg: &RunConfig, input: &Path) -> Result<()> {
    let file = fs::File::open(input)
        .map_err(|e| CliError::Usage(format!("cannot read sweep table {}: {e}", input.display())))?;
    let reports = experiment::read_sweep_csv(file)?;
    let (filtered, fit, evidence) = summarize(&reports, cfg.data.convergence_threshold, &cfg.fit_config());
    emit_summary(dir, &reports, 0, &filtered, &fit, &evidence)
}
