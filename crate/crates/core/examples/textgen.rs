//! Feature-pair rewrites for text prompts, with recovery.

use biasbench::rng::SeedTree;
use biasbench::taskgen::Quadrant;
use biasbench::textfeatures::{apply_feature_pair, recover_features, TextTask, WhitespaceTokenizer, Word};

const LINE: &str = "A slow start gives way to one of the most gripping final acts of the year";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = WhitespaceTokenizer;
    let mut rng = SeedTree::new(0).rng("textgen-example", 0);
    for task in TextTask::ALL {
        println!("{task}");
        for q in Quadrant::ALL {
            let line = apply_feature_pair(task, Word::Review, LINE, q, &mut rng, &tok)?;
            let (t, s) = recover_features(task, Word::Review, &line, &tok)?;
            println!("  {q:>8} (t={}, s={}): {line:?}", t as u8, s as u8);
        }
    }
    Ok(())
}
