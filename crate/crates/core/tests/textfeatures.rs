use biasbench::rng::SeedTree;
use biasbench::taskgen::Quadrant;
use biasbench::textfeatures::{
    apply_feature_pair, build_text_dataset, read_corpus, read_text_csv, recover_features, whitespace_parity,
    write_text_csv, Parity, TextError, TextTask, WhitespaceTokenizer, Word, PARITY_TOKENS,
};
use rand::Rng;
use regex::Regex;

const TOK: WhitespaceTokenizer = WhitespaceTokenizer;

/// Lowercase words joined by one or two spaces; never starts with a feature prefix.
fn random_line(rng: &mut impl Rng) -> String {
    let words = rng.random_range(12..30);
    let mut s = String::new();
    for i in 0..words {
        if i > 0 {
            s.push_str(if rng.random_bool(0.2) { "  " } else { " " });
        }
        for _ in 0..rng.random_range(1..8) {
            s.push(char::from(b'a' + rng.random_range(0..26u8)));
        }
    }
    s
}

#[test]
fn score_lines_match_the_pattern() {
    let re = Regex::new(r"^(?P<k>[1-9]|10)/10(?P<w> (review|prompt))?: ").unwrap();
    let mut rng = SeedTree::new(0).rng("score", 0);
    for i in 0..2000 {
        let q = Quadrant::ALL[i % 4];
        let word = if i % 3 == 0 { Word::Prompt } else { Word::Review };
        let text = random_line(&mut rng);
        let line = apply_feature_pair(TextTask::Score, word, &text, q, &mut rng, &TOK).unwrap();
        let caps = re.captures(&line).unwrap_or_else(|| panic!("{line}"));
        let k: u32 = caps["k"].parse().unwrap();
        let (t, s) = q.indicators();
        assert_eq!(k >= 6, t, "{line}");
        assert!((1..=10).contains(&k));
        assert_eq!(caps.name("w").map(|m| m.as_str().trim().to_string()), s.then(|| word.as_str().to_string()));
        assert!(line.ends_with(&text));
    }
}

#[test]
fn transforms_are_recoverable_on_10k_lines() {
    let mut rng = SeedTree::new(1).rng("recover", 0);
    for i in 0..10_000 {
        let task = TextTask::ALL[i % TextTask::ALL.len()];
        let q = Quadrant::ALL[(i / TextTask::ALL.len()) % 4];
        let word = if rng.random_bool(0.5) { Word::Review } else { Word::Prompt };
        let text = random_line(&mut rng);
        let line = apply_feature_pair(task, word, &text, q, &mut rng, &TOK).unwrap();
        assert_eq!(recover_features(task, word, &line, &TOK).unwrap(), q.indicators(), "{task} {q}: {line:?}");
    }
}

#[test]
fn parity_counts_whitespace_through_the_kth_token() {
    assert_eq!(whitespace_parity("a b c d e f g h i j k", 11, &TOK).unwrap(), Parity::Even);
    assert_eq!(whitespace_parity("a  b c d e f g h i j k", 11, &TOK).unwrap(), Parity::Odd);
    assert_eq!(whitespace_parity("a b c d e f g h i j k  l", 11, &TOK).unwrap(), Parity::Even);
    assert!(matches!(
        whitespace_parity("a b c", PARITY_TOKENS, &TOK),
        Err(TextError::TooFewTokens { found: 3, needed: 11 })
    ));
}

#[test]
fn table_rows() {
    let mut rng = SeedTree::new(2).rng("rows", 0);
    let text = "Great acting and a strong script throughout the whole film from start to end";
    let f = |task, q, rng: &mut _| apply_feature_pair(task, Word::Review, text, q, rng, &TOK).unwrap();
    assert_eq!(f(TextTask::FilmVsMovie, Quadrant::Neither, &mut rng), format!("Movie review: {text}"));
    assert_eq!(f(TextTask::FilmVsMovie, Quadrant::TOnly, &mut rng), format!("Film review: {text}"));
    assert!(f(TextTask::DashStart, Quadrant::TOnly, &mut rng).trim_start_matches([' ', 'S', 'o', ':']).starts_with('-'));
    assert_eq!(f(TextTask::DollarFirst, Quadrant::Both, &mut rng), format!("$ # {text}"));
    assert_eq!(f(TextTask::HashSecond, Quadrant::Both, &mut rng), format!("# $ {text}"));
    assert_eq!(f(TextTask::WhitespaceStart, Quadrant::Both, &mut rng), format!("   .{text}"));
    assert!(matches!(
        apply_feature_pair(TextTask::Score, Word::Review, "  ", Quadrant::Both, &mut rng, &TOK),
        Err(TextError::Empty)
    ));
}

#[test]
fn datasets_follow_composition_and_round_trip() {
    let mut rng = SeedTree::new(3).rng("corpus", 0);
    let corpus: String = (0..300).map(|_| random_line(&mut rng) + "\n\n").collect();
    let corpus = read_corpus(corpus.as_bytes()).unwrap();
    assert_eq!(corpus.len(), 300);
    let seeds = SeedTree::new(4);
    let rows = build_text_dataset(&corpus, TextTask::WhitespaceCount, Word::Review, 0.1, 200, &seeds, &TOK).unwrap();
    let count = |q| rows.iter().filter(|r| r.quadrant == q).count();
    assert_eq!([count(Quadrant::SOnly), count(Quadrant::Both), count(Quadrant::Neither), count(Quadrant::TOnly)], [20, 90, 90, 0]);
    let again = build_text_dataset(&corpus, TextTask::WhitespaceCount, Word::Review, 0.1, 200, &seeds, &TOK).unwrap();
    assert_eq!(rows, again);
    let mut buf = Vec::new();
    write_text_csv(&mut buf, &rows).unwrap();
    assert!(buf.starts_with(b"text,quadrant,t,s\n"));
    assert_eq!(read_text_csv(buf.as_slice()).unwrap(), rows);
    assert!(matches!(
        build_text_dataset(&corpus, TextTask::Score, Word::Review, 0.0, 301, &seeds, &TOK),
        Err(TextError::CorpusTooSmall { .. })
    ));
}

#[test]
fn task_names_parse() {
    for t in TextTask::ALL {
        assert_eq!(t.name().parse::<TextTask>().unwrap(), t);
    }
    assert!("nope".parse::<TextTask>().is_err());
}
