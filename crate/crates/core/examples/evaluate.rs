//! Per-partition reward of a policy on held-out test prompts.

use biasbench::experiment::{evaluate, FixedPolicy};
use biasbench::reward::synthetic_spec;
use biasbench::rng::SeedTree;
use biasbench::taskgen::{QuadDataset, SyntheticTask};
use biasbench::transformer::{ModelConfig, PolicyModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = SyntheticTask::PrefixDupl;
    let data = QuadDataset::build(task, 0.0, 256, 128, 5)?;
    let spec = synthetic_spec();
    let seeds = SeedTree::new(6);

    // always emitting an increasing run earns 1 exactly where the target holds
    let rising = FixedPolicy(vec![1, 2, 3, 4, 5]);
    for (q, s) in evaluate(&rising, &data.test, task, &spec, 1, &seeds)? {
        println!("fixed   {q:>8}: {:.3} ± {:.3}", s.mean, s.std);
    }
    let model = PolicyModel::init(ModelConfig::desk(), 0)?;
    for (q, s) in evaluate(&model, &data.test, task, &spec, 2, &seeds)? {
        println!("untrained {q:>6}: {:.3} ± {:.3}", s.mean, s.std);
    }
    Ok(())
}
