//! Naturalistic target/spurious feature pairs applied to raw text, and
//! quadrant-labelled text datasets built from a corpus.
//!
//! Nothing here runs a language model; the output is a CSV that an external
//! fine-tuning pipeline can consume.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;
use crate::taskgen::{composition, Quadrant, TaskError};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("unknown text task {0:?}")]
    UnknownTask(String),
    #[error("empty text")]
    Empty,
    #[error("text has {found} tokens, need at least {needed}")]
    TooFewTokens { found: usize, needed: usize },
    #[error("no padding prefix gives the required whitespace parity for {0:?}")]
    ParityUnreachable(String),
    #[error("corpus has {found} usable lines, need {needed}")]
    CorpusTooSmall { found: usize, needed: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, TextError>;

/// Tokens whose whitespace parity defines the whitespace-count features.
pub const PARITY_TOKENS: usize = 11;

/// Prefix used by the whitespace-start target.
pub const WHITESPACE_PREFIX: &str = "   ";

/// Paddings tried, in order, to reach a required whitespace parity.
pub const PARITY_PADS: [&str; 3] = ["", " ", " So: "];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TextTask {
    #[serde(rename = "film_vs_movie")]
    FilmVsMovie,
    #[serde(rename = "$_first")]
    DollarFirst,
    #[serde(rename = "score")]
    Score,
    #[serde(rename = "#_second")]
    HashSecond,
    #[serde(rename = "whitespace_start")]
    WhitespaceStart,
    #[serde(rename = "whitespace_count")]
    WhitespaceCount,
    #[serde(rename = "-_start")]
    DashStart,
}

impl TextTask {
    pub const ALL: [TextTask; 7] = [
        TextTask::FilmVsMovie,
        TextTask::DollarFirst,
        TextTask::Score,
        TextTask::HashSecond,
        TextTask::WhitespaceStart,
        TextTask::WhitespaceCount,
        TextTask::DashStart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextTask::FilmVsMovie => "film_vs_movie",
            TextTask::DollarFirst => "$_first",
            TextTask::Score => "score",
            TextTask::HashSecond => "#_second",
            TextTask::WhitespaceStart => "whitespace_start",
            TextTask::WhitespaceCount => "whitespace_count",
            TextTask::DashStart => "-_start",
        }
    }
}

impl fmt::Display for TextTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for TextTask {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self> {
        TextTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TextError::UnknownTask(s.to_string()))
    }
}

/// The noun used in prefixes: "review" for sentiment, "prompt" for toxicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Word {
    #[default]
    Review,
    Prompt,
}

impl Word {
    pub fn as_str(self) -> &'static str {
        match self {
            Word::Review => "review",
            Word::Prompt => "prompt",
        }
    }
}

/// Splits text into token byte spans. Swap in a subword tokenizer to match
/// a particular model's notion of "token".
pub trait Tokenizer {
    fn spans(&self, text: &str) -> Vec<(usize, usize)>;
}

/// Whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, text.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Parity of the number of whitespace characters from the start of `text`
/// through the end of its `k`-th token.
pub fn whitespace_parity(text: &str, k: usize, tokenizer: &dyn Tokenizer) -> Result<Parity> {
    let spans = tokenizer.spans(text);
    if spans.len() < k || k == 0 {
        return Err(TextError::TooFewTokens {
            found: spans.len(),
            needed: k.max(1),
        });
    }
    let end = spans[k - 1].1;
    let count = text[..end].chars().filter(|c| c.is_whitespace()).count();
    Ok(if count % 2 == 0 { Parity::Even } else { Parity::Odd })
}

fn with_parity(core: &str, want: Parity, tokenizer: &dyn Tokenizer) -> Result<String> {
    for pad in PARITY_PADS {
        let candidate = format!("{pad}{core}");
        if whitespace_parity(&candidate, PARITY_TOKENS, tokenizer)? == want {
            return Ok(candidate);
        }
    }
    Err(TextError::ParityUnreachable(core.chars().take(40).collect()))
}

/// Rewrites `text` so that it lands in `quadrant` for `task`.
pub fn apply_feature_pair(
    task: TextTask,
    word: Word,
    text: &str,
    quadrant: Quadrant,
    rng: &mut impl Rng,
    tokenizer: &dyn Tokenizer,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(TextError::Empty);
    }
    let (t, s) = quadrant.indicators();
    let w = word.as_str();
    let out = match task {
        TextTask::FilmVsMovie => {
            let prefix = match (t, s) {
                (true, false) => format!("Film {w}: "),
                (false, true) => format!("A movie {w}: "),
                (true, true) => format!("A film {w}: "),
                (false, false) => format!("Movie {w}: "),
            };
            prefix + text
        }
        TextTask::DollarFirst | TextTask::HashSecond => {
            let prefix = match (t, s, task) {
                (true, false, _) => "$ ",
                (false, true, _) => "# ",
                (true, true, TextTask::DollarFirst) => "$ # ",
                (true, true, _) => "# $ ",
                (false, false, _) => "",
            };
            format!("{prefix}{text}")
        }
        TextTask::Score => {
            let k = if t {
                rng.random_range(6..=10)
            } else {
                rng.random_range(1..=5)
            };
            if s {
                format!("{k}/10 {w}: {text}")
            } else {
                format!("{k}/10: {text}")
            }
        }
        TextTask::WhitespaceStart => {
            let prefix = match (t, s) {
                (true, false) => WHITESPACE_PREFIX.to_string(),
                (false, true) => ".".to_string(),
                (true, true) => format!("{WHITESPACE_PREFIX}."),
                (false, false) => String::new(),
            };
            prefix + text
        }
        TextTask::WhitespaceCount | TextTask::DashStart => {
            // one feature is the "-" prefix, the other is even whitespace parity
            let (dash, even) = if task == TextTask::WhitespaceCount {
                (s, t)
            } else {
                (t, s)
            };
            let core = if dash {
                format!("-{text}")
            } else {
                text.to_string()
            };
            let want = if even { Parity::Even } else { Parity::Odd };
            with_parity(&core, want, tokenizer)?
        }
    };
    Ok(out)
}

fn strip_parity_pad(line: &str) -> &str {
    PARITY_PADS
        .iter()
        .rev()
        .filter(|p| !p.is_empty())
        .find_map(|p| line.strip_prefix(p))
        .unwrap_or(line)
}

/// Recovers `(t, s)` from a transformed line. Assumes the raw text did not
/// itself begin with one of the task's prefixes.
pub fn recover_features(task: TextTask, word: Word, line: &str, tokenizer: &dyn Tokenizer) -> Result<(bool, bool)> {
    let w = word.as_str();
    Ok(match task {
        TextTask::FilmVsMovie => {
            if line.starts_with(&format!("Film {w}: ")) {
                (true, false)
            } else if line.starts_with(&format!("A movie {w}: ")) {
                (false, true)
            } else if line.starts_with(&format!("A film {w}: ")) {
                (true, true)
            } else {
                (false, false)
            }
        }
        TextTask::DollarFirst => {
            if line.starts_with("$ # ") {
                (true, true)
            } else if line.starts_with("$ ") {
                (true, false)
            } else if line.starts_with("# ") {
                (false, true)
            } else {
                (false, false)
            }
        }
        TextTask::HashSecond => {
            if line.starts_with("# $ ") {
                (true, true)
            } else if line.starts_with("$ ") {
                (true, false)
            } else if line.starts_with("# ") {
                (false, true)
            } else {
                (false, false)
            }
        }
        TextTask::Score => {
            let (k, rest) = line.split_once("/10").unwrap_or(("", line));
            let k: u32 = k.parse().unwrap_or(0);
            (k >= 6, rest.starts_with(&format!(" {w}: ")))
        }
        TextTask::WhitespaceStart => {
            let rest = line.strip_prefix(WHITESPACE_PREFIX);
            (rest.is_some(), rest.unwrap_or(line).starts_with('.'))
        }
        TextTask::WhitespaceCount | TextTask::DashStart => {
            let dash = strip_parity_pad(line).starts_with('-');
            let even = whitespace_parity(line, PARITY_TOKENS, tokenizer)? == Parity::Even;
            if task == TextTask::WhitespaceCount {
                (even, dash)
            } else {
                (dash, even)
            }
        }
    })
}

/// One emitted dataset row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub text: String,
    pub quadrant: Quadrant,
    pub t: u8,
    pub s: u8,
}

/// Non-empty, trimmed corpus lines.
pub fn read_corpus(input: impl BufRead) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// Picks `n` distinct corpus lines, assigns quadrants by the evidence rule
/// (s-only `round(p·n)`, the rest split between both and neither), applies
/// the transforms and shuffles. Line `i` uses its own derived stream.
pub fn build_text_dataset(
    corpus: &[String],
    task: TextTask,
    word: Word,
    p: f64,
    n: usize,
    seeds: &SeedTree,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<TextExample>> {
    let (s_only, both, neither) = composition(p, n)?;
    let usable: Vec<&String> = match task {
        TextTask::WhitespaceCount | TextTask::DashStart => corpus
            .iter()
            .filter(|l| tokenizer.spans(l).len() > PARITY_TOKENS)
            .collect(),
        _ => corpus.iter().collect(),
    };
    if usable.len() < n {
        return Err(TextError::CorpusTooSmall {
            found: usable.len(),
            needed: n,
        });
    }
    let mut idx: Vec<usize> = (0..usable.len()).collect();
    idx.shuffle(&mut seeds.rng("text-lines", 0));
    let quadrants = std::iter::repeat_n(Quadrant::SOnly, s_only)
        .chain(std::iter::repeat_n(Quadrant::Both, both))
        .chain(std::iter::repeat_n(Quadrant::Neither, neither));
    let mut rows = idx
        .into_iter()
        .zip(quadrants)
        .enumerate()
        .map(|(i, (line, q))| {
            let mut rng = seeds.rng("text-transform", i as u64);
            let text = apply_feature_pair(task, word, usable[line], q, &mut rng, tokenizer)?;
            let (t, s) = q.indicators();
            Ok(TextExample {
                text,
                quadrant: q,
                t: t as u8,
                s: s as u8,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.shuffle(&mut seeds.rng("text-order", 0));
    Ok(rows)
}

/// `text,quadrant,t,s` with a header row.
pub fn write_text_csv(out: impl Write, rows: &[TextExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_text_csv(input: impl std::io::Read) -> Result<Vec<TextExample>> {
    Ok(csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOK: WhitespaceTokenizer = WhitespaceTokenizer;

    fn rng() -> crate::rng::StreamRng {
        SeedTree::new(0).rng("text-test", 0)
    }

    #[test]
    fn table_rows() {
        let text = "Great film, would watch again and again and again and again.";
        let out = apply_feature_pair(TextTask::Score, Word::Review, text, Quadrant::Both, &mut rng(), &TOK).unwrap();
        let (k, rest) = out.split_once("/10 review: ").unwrap();
        let k: u32 = k.parse().unwrap();
        assert!((6..=10).contains(&k));
        assert_eq!(rest, text);
        let out = apply_feature_pair(TextTask::FilmVsMovie, Word::Review, text, Quadrant::Neither, &mut rng(), &TOK).unwrap();
        assert_eq!(out, format!("Movie review: {text}"));
        let out = apply_feature_pair(TextTask::DashStart, Word::Review, text, Quadrant::TOnly, &mut rng(), &TOK).unwrap();
        assert!(out.starts_with('-') || out.starts_with(" -") || out.starts_with(" So: -"));
        let out = apply_feature_pair(TextTask::WhitespaceStart, Word::Prompt, text, Quadrant::Both, &mut rng(), &TOK).unwrap();
        assert_eq!(out, format!("   .{text}"));
    }

    #[test]
    fn score_negative_ratings_stay_below_six() {
        let mut r = rng();
        for _ in 0..200 {
            let out = apply_feature_pair(TextTask::Score, Word::Review, "x", Quadrant::SOnly, &mut r, &TOK).unwrap();
            let k: u32 = out.split_once('/').unwrap().0.parse().unwrap();
            assert!((1..=5).contains(&k));
        }
    }

    #[test]
    fn parity_counts() {
        assert_eq!(whitespace_parity("a b c d e f g h i j k", 11, &TOK).unwrap(), Parity::Even);
        assert_eq!(whitespace_parity(" a b c d e f g h i j k", 11, &TOK).unwrap(), Parity::Odd);
        assert!(matches!(
            whitespace_parity("a b c", 11, &TOK),
            Err(TextError::TooFewTokens { found: 3, needed: 11 })
        ));
        // only the first 11 tokens count
        assert_eq!(whitespace_parity("a b c d e f g h i j k  l", 11, &TOK).unwrap(), Parity::Even);
    }

    #[test]
    fn so_pad_adds_two_whitespace_characters() {
        let text = "a b c d e f g h i j k l m";
        let ws = |s: &str| s.chars().filter(|c| c.is_whitespace()).count();
        let one = format!(" {text}");
        let so = format!(" So: {text}");
        assert!(so.ends_with(text) && one.ends_with(text));
        assert_eq!(ws(&so) - ws(&one), 1);
        assert_eq!(ws(&so) - ws(text), 2);
    }

    #[test]
    fn unknown_task_and_empty_text() {
        assert!(matches!("nope".parse::<TextTask>(), Err(TextError::UnknownTask(_))));
        assert!(matches!(
            apply_feature_pair(TextTask::Score, Word::Review, "  ", Quadrant::Both, &mut rng(), &TOK),
            Err(TextError::Empty)
        ));
        for t in TextTask::ALL {
            assert_eq!(t.name().parse::<TextTask>().unwrap(), t);
        }
    }

    #[test]
    fn recovery_on_every_task_and_quadrant() {
        let text = "this movie was a slow burn but the ending made it all worth it";
        let mut r = rng();
        for task in TextTask::ALL {
            for q in Quadrant::ALL {
                let out = apply_feature_pair(task, Word::Review, text, q, &mut r, &TOK).unwrap();
                assert_eq!(recover_features(task, Word::Review, &out, &TOK).unwrap(), q.indicators(), "{task} {q} {out:?}");
            }
        }
    }

    #[test]
    fn dataset_composition_and_csv() {
        let corpus: Vec<String> = (0..150).map(|i| format!("line {i} has a b c d e f g h i j k words")).collect();
        let rows = build_text_dataset(&corpus, TextTask::Score, Word::Review, 0.0, 100, &SeedTree::new(1), &TOK).unwrap();
        let count = |q| rows.iter().filter(|r| r.quadrant == q).count();
        assert_eq!((count(Quadrant::SOnly), count(Quadrant::Both), count(Quadrant::Neither)), (0, 50, 50));
        let mut buf = Vec::new();
        write_text_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"text,quadrant,t,s\n"));
        assert_eq!(read_text_csv(buf.as_slice()).unwrap(), rows);
        assert!(matches!(
            build_text_dataset(&corpus, TextTask::Score, Word::Review, 0.0, 151, &SeedTree::new(1), &TOK),
            Err(TextError::CorpusTooSmall { .. })
        ));
    }
}
