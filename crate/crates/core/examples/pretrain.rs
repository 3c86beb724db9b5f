//! Next-token pre-training on a task's balanced prompt mixture.

use biasbench::pretrain::{pretrain_lm, smooth, PretrainConfig};
use biasbench::rng::SeedTree;
use biasbench::taskgen::SyntheticTask;
use biasbench::transformer::{ModelConfig, PolicyModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        ..ModelConfig::desk()
    };
    let mut model = PolicyModel::init(config, 0)?;
    let cfg = PretrainConfig {
        steps: 200,
        batch_size: 64,
        lr: 1e-3,
        ..PretrainConfig::default()
    };
    let curve = pretrain_lm(&mut model, SyntheticTask::AdjDupl, &cfg, &SeedTree::new(1))?;
    let s = smooth(&curve, 50);
    for step in (0..curve.len()).step_by(50).chain([curve.len() - 1]) {
        println!("step {step:>4}: loss {:.4} (smoothed {:.4})", curve[step], s[step]);
    }
    println!("{} parameters", model.num_params());
    Ok(())
}
