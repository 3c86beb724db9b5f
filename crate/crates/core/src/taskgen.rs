//! Synthetic target/spurious feature pairs over 10-digit prompts, quadrant
//! samplers, and training/test sets with a controlled evidence ratio.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Digits per prompt.
pub const PROMPT_LEN: usize = 10;
/// Digits 0-9.
pub const VOCAB_SIZE: usize = 10;
/// Attempts before `sample_quadrant` gives up.
pub const REJECTION_BUDGET: usize = 100_000;
/// The spurious feature of every synthetic task: this digit occurs in the prompt.
pub const SPURIOUS_DIGIT: u8 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("prompt must be {PROMPT_LEN} digits 0-9, got {0:?}")]
    BadPrompt(String),
    #[error("rejection budget of {REJECTION_BUDGET} exhausted sampling {quadrant} for {task}")]
    RejectionBudget { task: SyntheticTask, quadrant: Quadrant },
    #[error("evidence ratio p={0} is outside [0, 1]")]
    BadEvidence(f64),
    #[error("dataset size {0} is too small (need at least 2)")]
    TooSmall(usize),
    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error("dataset file: {0}")]
    Csv(String),
}

/// A cell of the (target, spurious) partition of prompt space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    SOnly,
    TOnly,
    Both,
    Neither,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::SOnly,
        Quadrant::TOnly,
        Quadrant::Both,
        Quadrant::Neither,
    ];

    /// `(t, s)` indicator pair.
    pub fn indicators(self) -> (bool, bool) {
        match self {
            Quadrant::SOnly => (false, true),
            Quadrant::TOnly => (true, false),
            Quadrant::Both => (true, true),
            Quadrant::Neither => (false, false),
        }
    }

    pub fn from_indicators(t: bool, s: bool) -> Self {
        match (t, s) {
            (false, true) => Quadrant::SOnly,
            (true, false) => Quadrant::TOnly,
            (true, true) => Quadrant::Both,
            (false, false) => Quadrant::Neither,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::SOnly => "s_only",
            Quadrant::TOnly => "t_only",
            Quadrant::Both => "both",
            Quadrant::Neither => "neither",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Quadrant {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "s_only" => Ok(Quadrant::SOnly),
            "t_only" => Ok(Quadrant::TOnly),
            "both" => Ok(Quadrant::Both),
            "neither" => Ok(Quadrant::Neither),
            _ => Err(TaskError::Unknown {
                kind: "quadrant",
                name: s.to_string(),
            }),
        }
    }
}

/// Ten digits in 0..=9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prompt([u8; PROMPT_LEN]);

impl Prompt {
    pub fn new(digits: &[u8]) -> Result<Self, TaskError> {
        let arr: [u8; PROMPT_LEN] = digits
            .try_into()
            .map_err(|_| TaskError::BadPrompt(format!("{digits:?}")))?;
        if arr.iter().any(|&d| d as usize >= VOCAB_SIZE) {
            return Err(TaskError::BadPrompt(format!("{digits:?}")));
        }
        Ok(Self(arr))
    }

    pub fn digits(&self) -> &[u8; PROMPT_LEN] {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&d| d as usize)
    }

    fn random(rng: &mut impl Rng) -> Self {
        let mut d = [0u8; PROMPT_LEN];
        for x in &mut d {
            *x = rng.random_range(0..VOCAB_SIZE as u8);
        }
        Self(d)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for Prompt {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits: Option<Vec<u8>> = s
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as u8))
            .collect();
        digits
            .and_then(|d| Prompt::new(&d).ok())
            .ok_or_else(|| TaskError::BadPrompt(s.to_string()))
    }
}

impl Serialize for Prompt {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prompt {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four synthetic tasks. The spurious feature is always "2 occurs".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SyntheticTask {
    #[serde(rename = "contains-1")]
    Contains1,
    #[serde(rename = "prefix-dupl")]
    PrefixDupl,
    #[serde(rename = "adj-dupl")]
    AdjDupl,
    #[serde(rename = "first-last")]
    FirstLast,
}

impl SyntheticTask {
    pub const ALL: [SyntheticTask; 4] = [
        SyntheticTask::Contains1,
        SyntheticTask::PrefixDupl,
        SyntheticTask::AdjDupl,
        SyntheticTask::FirstLast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::Contains1 => "contains-1",
            SyntheticTask::PrefixDupl => "prefix-dupl",
            SyntheticTask::AdjDupl => "adj-dupl",
            SyntheticTask::FirstLast => "first-last",
        }
    }

    /// Target predicate.
    pub fn target(self, p: &Prompt) -> bool {
        let d = p.digits();
        match self {
            SyntheticTask::Contains1 => d.contains(&1),
            SyntheticTask::PrefixDupl => d[0] == d[1],
            SyntheticTask::AdjDupl => d.windows(2).any(|w| w[0] == w[1]),
            SyntheticTask::FirstLast => d[0] == d[PROMPT_LEN - 1],
        }
    }

    /// Spurious predicate.
    pub fn spurious(self, p: &Prompt) -> bool {
        p.digits().contains(&SPURIOUS_DIGIT)
    }

    pub fn features(self, p: &Prompt) -> (bool, bool) {
        (self.target(p), self.spurious(p))
    }

    pub fn quadrant(self, p: &Prompt) -> Quadrant {
        let (t, s) = self.features(p);
        Quadrant::from_indicators(t, s)
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for SyntheticTask {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SyntheticTask::ALL
            .into_iter()
            .find(|t| t.name() == s || t.name().replace('-', "_") == s)
            .ok_or_else(|| TaskError::Unknown {
                kind: "task",
                name: s.to_string(),
            })
    }
}

/// Validates a raw digit sequence and returns its `(t, s)` indicators.
pub fn eval_features(task: SyntheticTask, digits: &[u8]) -> Result<(bool, bool), TaskError> {
    Ok(task.features(&Prompt::new(digits)?))
}

/// Uniform draw from the quadrant's prompt set, by rejection from uniform
/// digit strings conditioned on both indicators jointly.
pub fn sample_quadrant(
    task: SyntheticTask,
    quadrant: Quadrant,
    rng: &mut impl Rng,
) -> Result<Prompt, TaskError> {
    for _ in 0..REJECTION_BUDGET {
        let p = Prompt::random(rng);
        if task.quadrant(&p) == quadrant {
            return Ok(p);
        }
    }
    Err(TaskError::RejectionBudget { task, quadrant })
}

/// A training prompt with its recorded quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub prompt: Prompt,
    pub quadrant: Quadrant,
}

/// `(s_only, both, neither)` counts for evidence `p` and size `n`: `round(p·n)`
/// s-only examples, the remainder split evenly with an odd leftover going to
/// neither.
pub fn composition(p: f64, n: usize) -> Result<(usize, usize, usize), TaskError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(TaskError::BadEvidence(p));
    }
    if n < 2 {
        return Err(TaskError::TooSmall(n));
    }
    let s_only = ((p * n as f64).round() as usize).min(n);
    let rest = n - s_only;
    let both = rest / 2;
    Ok((s_only, both, rest - both))
}

/// Training set of size `n` with evidence `p`; never contains t-only prompts.
pub fn build_training_set(
    task: SyntheticTask,
    p: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Example>, TaskError> {
    use rand::seq::SliceRandom;

    let (s_only, both, neither) = composition(p, n)?;
    let mut out = Vec::with_capacity(n);
    for (quadrant, count) in [
        (Quadrant::SOnly, s_only),
        (Quadrant::Both, both),
        (Quadrant::Neither, neither),
    ] {
        for _ in 0..count {
            out.push(Example {
                prompt: sample_quadrant(task, quadrant, rng)?,
                quadrant,
            });
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Per-quadrant test prompts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TestSet {
    pub partitions: BTreeMap<Quadrant, Vec<Prompt>>,
}

impl TestSet {
    pub fn get(&self, q: Quadrant) -> &[Prompt] {
        self.partitions.get(&q).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n_per_quadrant` distinct prompts for every quadrant (t-only included),
/// none of which appears in `exclude`.
pub fn build_test_set(
    task: SyntheticTask,
    n_per_quadrant: usize,
    exclude: &HashSet<Prompt>,
    rng: &mut impl Rng,
) -> Result<TestSet, TaskError> {
    let mut seen: HashSet<Prompt> = HashSet::new();
    let mut partitions = BTreeMap::new();
    for q in Quadrant::ALL {
        let mut prompts = Vec::with_capacity(n_per_quadrant);
        let mut attempts = 0usize;
        while prompts.len() < n_per_quadrant {
            attempts += 1;
            if attempts > REJECTION_BUDGET.max(n_per_quadrant * 100) {
                return Err(TaskError::RejectionBudget { task, quadrant: q });
            }
            let p = sample_quadrant(task, q, rng)?;
            if !exclude.contains(&p) && seen.insert(p) {
                prompts.push(p);
            }
        }
        partitions.insert(q, prompts);
    }
    Ok(TestSet { partitions })
}

/// Training and test data for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadDataset {
    pub task: SyntheticTask,
    pub p: f64,
    pub seed: u64,
    pub train: Vec<Example>,
    pub test: TestSet,
}

impl QuadDataset {
    pub fn build(
        task: SyntheticTask,
        p: f64,
        n_train: usize,
        n_test_per_quadrant: usize,
        seed: u64,
    ) -> Result<Self, TaskError> {
        let seeds = crate::rng::SeedTree::new(seed);
        let train = build_training_set(task, p, n_train, &mut seeds.rng("train", 0))?;
        let seen: HashSet<Prompt> = train.iter().map(|e| e.prompt).collect();
        let test = build_test_set(task, n_test_per_quadrant, &seen, &mut seeds.rng("test", 0))?;
        Ok(Self {
            task,
            p,
            seed,
            train,
            test,
        })
    }

    pub fn train_counts(&self) -> BTreeMap<Quadrant, usize> {
        let mut m: BTreeMap<Quadrant, usize> = Quadrant::ALL.iter().map(|&q| (q, 0)).collect();
        for e in &self.train {
            *m.get_mut(&e.quadrant).unwrap() += 1;
        }
        m
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    prompt_digits: Prompt,
    quadrant: Quadrant,
    t: u8,
    s: u8,
}

/// Writes `prompt_digits,quadrant,t,s` rows with a header.
pub fn write_examples_csv<W: Write>(
    task: SyntheticTask,
    rows: impl IntoIterator<Item = Example>,
    out: W,
) -> Result<(), TaskError> {
    let mut w = csv::Writer::from_writer(out);
    for e in rows {
        let (t, s) = task.features(&e.prompt);
        w.serialize(CsvRecord {
            prompt_digits: e.prompt,
            quadrant: e.quadrant,
            t: t as u8,
            s: s as u8,
        })
        .map_err(|e| TaskError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| TaskError::Csv(e.to_string()))
}

/// Reads rows written by [`write_examples_csv`], verifying every row's
/// indicators against the task predicates and the recorded quadrant.
pub fn read_examples_csv<R: Read>(task: SyntheticTask, input: R) -> Result<Vec<Example>, TaskError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize::<CsvRecord>() {
        let rec = rec.map_err(|e| TaskError::Csv(e.to_string()))?;
        let (t, s) = task.features(&rec.prompt_digits);
        if (t as u8, s as u8) != (rec.t, rec.s) || task.quadrant(&rec.prompt_digits) != rec.quadrant {
            return Err(TaskError::Csv(format!(
                "row {} is inconsistent with task {task}",
                rec.prompt_digits
            )));
        }
        out.push(Example {
            prompt: rec.prompt_digits,
            quadrant: rec.quadrant,
        });
    }
    Ok(out)
}
