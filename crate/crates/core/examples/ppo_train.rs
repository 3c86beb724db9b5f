//! PPO fine-tuning of a pre-trained model against its frozen copy under the
//! gated reward. Uses the quick preset; a few minutes on one core.

use biasbench::experiment::{pretrain_task, ExperimentConfig};
use biasbench::ppo::train;
use biasbench::reward::synthetic_spec;
use biasbench::rng::SeedTree;
use biasbench::taskgen::{build_training_set, SyntheticTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::quick();
    let task = SyntheticTask::Contains1;
    let (reference, curve) = pretrain_task(task, &cfg, 0)?;
    println!("pre-trained: loss {:.3} -> {:.3}", curve[0], curve[curve.len() - 1]);
    let seeds = SeedTree::new(3);
    let data = build_training_set(task, 0.1, cfg.n_train, &mut seeds.rng("train", 0))?;
    let mut policy = reference.clone();
    let log = train(&mut policy, &reference, &data, task, &synthetic_spec(), &cfg.ppo, &seeds.child("ppo", 0))?;
    for r in log.rows.iter().step_by(5) {
        println!(
            "iter {:>2}: reward {:.3} kl {:.4} beta {:.4} clip {:.2}",
            r.iteration, r.mean_reward, r.mean_kl, r.beta, r.clip_frac
        );
    }
    Ok(())
}
