//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! The process exits 0 whatever the verdicts so that `cargo test` stays
//! usable; set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.
//! `ACCEPTANCE_ONLY=1,4,8` runs a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use biasbench::experiment::{
    filter_converged, prepare_tasks, sweep_prepared, EvalReport, ExperimentConfig, FitConfig, PartitionStats,
    PreparedTask, SweepGrid, SweepOutcome, CONVERGENCE_THRESHOLD,
};
use biasbench::mdlprobe::{prequential_mdl, ProbeConfig};
use biasbench::reward::{dec_pairs, inc_pairs, synthetic_reward};
use biasbench::rng::SeedTree;
use biasbench::taskgen::{build_training_set, Prompt, Quadrant, SyntheticTask};
use biasbench::transformer::{PolicyModel, Sampling};
use rand::Rng;
use rand_distr::StandardNormal;

const MASTER: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Keeps every warning for inspection and echoes info-level progress.
struct Capture {
    warnings: Mutex<Vec<String>>,
}

impl log::Log for Capture {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Info
    }

    fn log(&self, r: &log::Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let line = r.args().to_string();
        eprintln!("[{}] {line}", r.level());
        if r.level() == log::Level::Warn {
            self.warnings.lock().unwrap().push(line);
        }
    }

    fn flush(&self) {}
}

static LOGGER: Capture = Capture {
    warnings: Mutex::new(Vec::new()),
};

fn warnings_since(mark: usize) -> Vec<String> {
    LOGGER.warnings.lock().unwrap()[mark..].to_vec()
}

fn warning_mark() -> usize {
    LOGGER.warnings.lock().unwrap().len()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn numerics() -> Verdict {
    let start = Instant::now();
    let prims = common::primitive_checks(20, MASTER);
    let (worst_name, worst) = prims.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    let model = common::model_check(20, MASTER);
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-4 && model < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "{} primitives x 20 instances, worst {worst:.2e} ({worst_name}); full model x 20, worst {model:.2e}; {}",
            prims.len(),
            secs(elapsed)
        ),
    )
}

/// Pair counts from the decimal rendering.
fn pair_oracle(y: &[u8]) -> (usize, usize) {
    let s: Vec<char> = y.iter().map(|&d| char::from(b'0' + d)).collect();
    let inc = s.windows(2).filter(|w| w[1] > w[0]).count();
    let dec = s.windows(2).filter(|w| w[1] < w[0]).count();
    (inc, dec)
}

fn reward_oracle() -> Verdict {
    let with_t: Prompt = "1000000000".parse().unwrap();
    let without_t: Prompt = "0000000000".parse().unwrap();
    let mut mismatches = 0usize;
    let (mut sum_t, mut sum_f) = (0.0, 0.0);
    for v in 0..100_000u32 {
        let y: Vec<u8> = format!("{v:05}").bytes().map(|b| b - b'0').collect();
        let (inc, dec) = pair_oracle(&y);
        let rt = synthetic_reward(SyntheticTask::Contains1, &with_t, &y).unwrap();
        let rf = synthetic_reward(SyntheticTask::Contains1, &without_t, &y).unwrap();
        if inc_pairs(&y).unwrap() != inc
            || dec_pairs(&y).unwrap() != dec
            || rt != inc as f64 / 4.0
            || rf != dec as f64 / 4.0
        {
            mismatches += 1;
        }
        sum_t += rt;
        sum_f += rf;
    }
    let (exp_t, exp_f) = (sum_t / 1e5, sum_f / 1e5);

    let cfg = ExperimentConfig::quick();
    let model = PolicyModel::init(cfg.model, MASTER).unwrap();
    let task = SyntheticTask::Contains1;
    let seeds = SeedTree::new(MASTER).child("untrained", 0);
    let train = build_training_set(task, 0.1, 10_000, &mut seeds.rng("prompts", 0)).unwrap();
    let mut total = 0.0;
    for (c, chunk) in train.chunks(500).enumerate() {
        let prompts: Vec<Vec<usize>> = chunk.iter().map(|e| e.prompt.tokens().collect()).collect();
        let mut rngs: Vec<_> = (0..chunk.len()).map(|i| seeds.rng("sample", (c * 500 + i) as u64)).collect();
        let out = model.sample_batch(&prompts, 5, Sampling::Temperature(1.0), &mut rngs).unwrap();
        for (e, toks) in chunk.iter().zip(&out.tokens) {
            let y: Vec<u8> = toks.iter().map(|&t| t as u8).collect();
            total += synthetic_reward(task, &e.prompt, &y).unwrap();
        }
    }
    let measured = total / train.len() as f64;
    Verdict::new(
        mismatches == 0 && (exp_t - 0.45).abs() < 1e-12 && (exp_f - 0.45).abs() < 1e-12 && (measured - 0.45).abs() <= 0.05,
        format!(
            "10^5 completions, {mismatches} mismatches; uniform expectation {exp_t:.4}/{exp_f:.4}; untrained policy {measured:.4} over 10^4 episodes"
        ),
    )
}

fn composition_grid() -> Verdict {
    let ps = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0];
    let ns = [2usize, 3, 10, 101, 999, 1000, 4096];
    let mut checked = 0;
    let mut failures = Vec::new();
    for task in SyntheticTask::ALL {
        for &p in &ps {
            for &n in &ns {
                let seed = SeedTree::new(MASTER).child(&format!("grid/{task}/{p}"), n as u64);
                let set = build_training_set(task, p, n, &mut seed.rng("train", 0)).unwrap();
                let s_only = (p * n as f64).round() as usize;
                let both = (n - s_only) / 2;
                let neither = n - s_only - both;
                let mut counts = BTreeMap::new();
                for e in &set {
                    if task.quadrant(&e.prompt) != e.quadrant {
                        failures.push(format!("{task} p={p} n={n}: mislabelled prompt"));
                    }
                    *counts.entry(e.quadrant).or_insert(0usize) += 1;
                }
                let got = |q| counts.get(&q).copied().unwrap_or(0);
                let observed = (got(Quadrant::SOnly), got(Quadrant::Both), got(Quadrant::Neither), got(Quadrant::TOnly));
                if observed != (s_only, both, neither, 0) {
                    failures.push(format!("{task} p={p} n={n}: {observed:?}"));
                }
                checked += 1;
            }
        }
    }
    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} (task, p, n) cells match exactly, zero t-only examples")
        } else {
            failures.join("; ")
        },
    )
}

fn mdl_sanity() -> Verdict {
    let start = Instant::now();
    let n = 1024;
    let cfg = ProbeConfig::default();
    let mut rng = SeedTree::new(MASTER).rng("mdl-sanity", 0);
    let reps: Vec<Vec<f64>> = (0..n).map(|_| (0..64).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let coins: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let random = prequential_mdl(&reps, &coins, &cfg, 1).unwrap();
    let direction: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let planted_labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let planted_reps: Vec<Vec<f64>> = reps
        .iter()
        .zip(&planted_labels)
        .map(|(r, &y)| {
            let shift = if y { 2.0 } else { -2.0 };
            r.iter().zip(&direction).map(|(v, d)| v + shift * d / norm).collect()
        })
        .collect();
    let planted = prequential_mdl(&planted_reps, &planted_labels, &cfg, 1).unwrap();
    let elapsed = start.elapsed();
    Verdict::new(
        random >= 0.95 * n as f64 && planted < 0.3 * n as f64 && elapsed < Duration::from_secs(300),
        format!(
            "random labels {random:.1} bits (>= {:.1}); planted direction {planted:.1} bits (< {:.1}); {}",
            0.95 * n as f64,
            0.3 * n as f64,
            secs(elapsed)
        ),
    )
}

type Prepared = Vec<(SyntheticTask, Result<PreparedTask, String>)>;

fn mdl_ordering(prepared: &Prepared, elapsed: Duration) -> Verdict {
    let mut mdl_t = BTreeMap::new();
    let mut parts = Vec::new();
    for (task, prep) in prepared {
        match prep {
            Ok(p) => {
                mdl_t.insert(*task, p.mdl.target.mean_bits);
                parts.push(format!(
                    "{task} MDL(t) {:.1}±{:.1} MDL(s) {:.1}±{:.1} rel {:.3}",
                    p.mdl.target.mean_bits, p.mdl.target.std_bits, p.mdl.spurious.mean_bits, p.mdl.spurious.std_bits, p.mdl.rel_mdl
                ));
            }
            Err(e) => parts.push(format!("{task} failed: {e}")),
        }
    }
    let order = SyntheticTask::ALL;
    let ordered = order.iter().all(|t| mdl_t.contains_key(t))
        && order.windows(2).all(|w| mdl_t[&w[0]] < mdl_t[&w[1]]);
    let rel_c1 = prepared
        .iter()
        .find(|(t, _)| *t == SyntheticTask::Contains1)
        .and_then(|(_, p)| p.as_ref().ok())
        .map(|p| p.mdl.rel_mdl);
    let rel_ok = rel_c1.is_some_and(|r| (0.75..=1.3).contains(&r));
    Verdict::new(
        ordered && rel_ok && elapsed < Duration::from_secs(1800),
        format!(
            "ordering {}, contains-1 rel {} (want [0.75, 1.3]); {}; {}",
            if ordered { "holds" } else { "violated" },
            rel_c1.map_or("n/a".into(), |r| format!("{r:.3}")),
            parts.join("; "),
            secs(elapsed)
        ),
    )
}

fn mean_over_seeds(reports: &[EvalReport], task: SyntheticTask, p: f64, q: Quadrant) -> Option<f64> {
    let xs: Vec<f64> = reports.iter().filter(|r| r.task == task && r.p == p).map(|r| r.mean(q)).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn evidence(outcome: &SweepOutcome) -> Verdict {
    let reports = outcome.reports();
    let c1 = SyntheticTask::Contains1;
    let fl = SyntheticTask::FirstLast;
    let count = |t| reports.iter().filter(|r| r.task == t && r.p == 0.1).count();
    let (Some(c1_s), Some(c1_t), Some(fl_t)) = (
        mean_over_seeds(&reports, c1, 0.1, Quadrant::SOnly),
        mean_over_seeds(&reports, c1, 0.1, Quadrant::TOnly),
        mean_over_seeds(&reports, fl, 0.1, Quadrant::TOnly),
    ) else {
        return Verdict::new(false, "missing p = 0.1 runs");
    };
    Verdict::new(
        c1_s > 0.9 && c1_t > 0.9 && fl_t <= c1_t - 0.15 && count(c1) == 3 && count(fl) == 3,
        format!(
            "p=0.1 over {} seeds: contains-1 s-only {c1_s:.3} t-only {c1_t:.3}; first-last t-only {fl_t:.3} (gap {:.3}, want >= 0.15)",
            count(c1),
            c1_t - fl_t
        ),
    )
}

fn extractability(outcome: &SweepOutcome) -> Verdict {
    let fit = match &outcome.fit {
        Ok(f) => f,
        Err(e) => return Verdict::new(false, format!("fit failed: {e}")),
    };
    let slope_ok = fit.slope > 0.0 && fit.slope_band.0 > 0.0;
    let significant: Vec<String> = outcome
        .evidence
        .iter()
        .filter(|e| e.rho.is_some_and(|r| r > 0.0) && e.p_value.is_some_and(|p| p < 0.05))
        .map(|e| e.task.to_string())
        .collect();
    let rows: Vec<String> = outcome
        .evidence
        .iter()
        .map(|e| match (e.rho, e.p_value) {
            (Some(r), Some(p)) => format!("{} rho {r:.3} p {p:.4}", e.task),
            _ => format!("{} {}", e.task, e.note.as_deref().unwrap_or("undefined")),
        })
        .collect();
    Verdict::new(
        slope_ok && significant.len() >= 3,
        format!(
            "slope {:.3} band [{:.3}, {:.3}] over {} points; spearman significant for {}/4 ({})",
            fit.slope,
            fit.slope_band.0,
            fit.slope_band.1,
            fit.n_points,
            significant.len(),
            rows.join("; ")
        ),
    )
}

fn cli(args: &[&str], paths: &[&Path]) -> Result<(), String> {
    let mut all: Vec<&OsStr> = args.iter().map(OsStr::new).collect();
    all.extend(paths.iter().map(|p| p.as_os_str()));
    let out = common::biasbench(&all);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(root: &Path, cfg: &Path, corpus: &Path) -> Result<(), String> {
    let base = [Path::new("--config"), cfg, Path::new("--out"), root];
    cli(&["gen"], &base)?;
    let mut text = vec![Path::new("--corpus"), corpus];
    text.extend(base);
    cli(&["textgen", "--text-task=whitespace_count", "--n", "120"], &text)?;
    for cmd in ["pretrain", "probe", "train", "eval", "sweep"] {
        cli(&[cmd], &base)?;
    }
    let sweep_csv = root.join("reports/sweep.csv");
    let report_out = root.join("rereport");
    cli(&["report"], &[Path::new("--config"), cfg, Path::new("--input"), &sweep_csv, Path::new("--out"), &report_out])
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    let corpus = tmp.path().join("corpus.txt");
    fs::write(&cfg, common::TINY_TOML).unwrap();
    fs::write(&corpus, common::corpus(300)).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if let Err(e) = pipeline(&a, &cfg, &corpus).and_then(|_| pipeline(&b, &cfg, &corpus)) {
        return Verdict::new(false, e);
    }
    let (fa, fb) = (files(&a), files(&b));
    let data_files = fa
        .keys()
        .filter(|p| matches!(p.extension().and_then(OsStr::to_str), Some("csv" | "json")))
        .count();
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Verdict::new(
        differing.is_empty() && data_files > 0,
        if differing.is_empty() {
            format!(
                "gen, textgen, pretrain, probe, train, eval, sweep, report run twice: {} files identical ({data_files} CSV/JSON)",
                fa.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn convergence_filter(outcome: &SweepOutcome) -> Verdict {
    let mut reports = outcome.reports();
    let natural = reports.len();
    let mut injected = HashSet::new();
    let donors: Vec<EvalReport> = reports.iter().take(4).cloned().collect();
    for (i, donor) in donors.into_iter().enumerate() {
        let mut bad = donor;
        bad.seed = 1000 + i as u64;
        bad.partitions.insert(Quadrant::Neither, PartitionStats { mean: 0.5 - 0.1 * i as f64, std: 0.1 });
        bad.converged = false;
        injected.insert((bad.task, bad.seed));
        reports.push(bad);
    }
    let mark = warning_mark();
    let filtered = filter_converged(&reports, CONVERGENCE_THRESHOLD);
    let warnings = warnings_since(mark);
    let discarded: HashSet<_> = filtered.discarded.iter().map(|d| (d.task, d.seed)).collect();
    let all_injected_dropped = injected.iter().all(|k| discarded.contains(k));
    let all_logged = filtered.discarded.iter().all(|d| {
        warnings
            .iter()
            .any(|w| w.contains(d.task.name()) && w.contains(&format!("seed={}", d.seed)))
    });
    let kept_ok = filtered.kept.iter().all(|r| r.mean(Quadrant::Neither) >= CONVERGENCE_THRESHOLD);
    let balanced = filtered.kept.len() + filtered.discarded.len() == reports.len();
    Verdict::new(
        all_injected_dropped && all_logged && kept_ok && balanced,
        format!(
            "{} sweep runs + {} injected: kept {} + discarded {} = {}; {} warnings logged",
            natural,
            injected.len(),
            filtered.kept.len(),
            filtered.discarded.len(),
            reports.len(),
            warnings.len()
        ),
    )
}

fn selected() -> Option<BTreeSet<usize>> {
    let raw = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(raw.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() {
    log::set_logger(&LOGGER).expect("logger already set");
    log::set_max_level(log::LevelFilter::Info);
    let only = selected();
    let want = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        println!("{} criterion {n} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((n, name, v));
    };

    if want(1) {
        record(1, "numerics", numerics());
    }
    if want(2) {
        record(2, "reward oracle", reward_oracle());
    }
    if want(3) {
        record(3, "dataset composition", composition_grid());
    }
    if want(4) {
        record(4, "MDL sanity", mdl_sanity());
    }

    let heavy = [5, 6, 7, 9].iter().any(|&n| want(n));
    if heavy {
        let cfg = ExperimentConfig::quick();
        let start = Instant::now();
        let prepared = prepare_tasks(&SyntheticTask::ALL, &cfg, MASTER);
        let prep_time = start.elapsed();
        if want(5) {
            record(5, "MDL ordering", mdl_ordering(&prepared, prep_time));
        }
        if [6, 7, 9].iter().any(|&n| want(n)) {
            let grid = SweepGrid {
                tasks: SyntheticTask::ALL.to_vec(),
                ps: vec![0.0, 0.05, 0.1, 0.5],
                seeds: 3,
            };
            let start = Instant::now();
            match sweep_prepared(&grid, &cfg, &FitConfig::default(), MASTER, &prepared) {
                Ok(outcome) => {
                    eprintln!("sweep of {} conditions took {}", grid.conditions().len(), secs(start.elapsed()));
                    if want(6) {
                        record(6, "evidence", evidence(&outcome));
                    }
                    if want(7) {
                        record(7, "extractability correlation", extractability(&outcome));
                    }
                    if want(9) {
                        record(9, "convergence filter", convergence_filter(&outcome));
                    }
                }
                Err(e) => {
                    for (n, name) in [(6, "evidence"), (7, "extractability correlation"), (9, "convergence filter")] {
                        if want(n) {
                            record(n, name, Verdict::new(false, format!("sweep failed: {e}")));
                        }
                    }
                }
            }
        }
    }
    if want(8) {
        record(8, "reproducibility", reproducibility());
    }

    verdicts.sort_by_key(|v| v.0);
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.2.pass).map(|v| v.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
    );
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && !failed.is_empty() {
        std::process::exit(1);
    }
}
