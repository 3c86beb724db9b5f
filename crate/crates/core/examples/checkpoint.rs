//! Saving and restoring a model bit-exactly.

use biasbench::cli::{load_model, save_model};
use biasbench::transformer::{ModelConfig, PolicyModel, TokenBatch};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = PolicyModel::init(ModelConfig::desk(), 42)?;
    let path = std::env::temp_dir().join("biasbench-example.bbck");
    save_model(&path, &model)?;
    let back = load_model(&path)?;
    let batch = TokenBatch::from_rows(&[vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 0]])?;
    let same = model.logits(&batch)? == back.logits(&batch)?;
    println!(
        "{} parameters, {} bytes on disk, identical logits: {same}",
        back.num_params(),
        std::fs::metadata(&path)?.len()
    );
    std::fs::remove_file(path)?;
    Ok(())
}
