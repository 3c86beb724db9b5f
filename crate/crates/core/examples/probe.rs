//! Prequential MDL of the target and spurious features.

use biasbench::mdlprobe::{task_mdl, ProbeConfig};
use biasbench::pretrain::{pretrain_lm, PretrainConfig};
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
    let probe = ProbeConfig {
        n: 512,
        seeds: 3,
        ..ProbeConfig::default()
    };
    for task in [SyntheticTask::Contains1, SyntheticTask::FirstLast] {
        let mut model = PolicyModel::init(config, 0)?;
        let cfg = PretrainConfig {
            steps: 150,
            batch_size: 64,
            lr: 1e-3,
            ..PretrainConfig::default()
        };
        pretrain_lm(&mut model, task, &cfg, &SeedTree::new(1))?;
        let m = task_mdl(&model, task, &probe, &SeedTree::new(2))?;
        println!(
            "{task}: MDL(t) {:.1} ± {:.1}, MDL(s) {:.1} ± {:.1}, relative {:.3} ± {:.3}",
            m.target.mean_bits, m.target.std_bits, m.spurious.mean_bits, m.spurious.std_bits, m.rel_mdl, m.rel_mdl_std
        );
    }
    Ok(())
}
