mod common;

use biasbench::numerics::{grad_check_params, Graph};
use biasbench::ppo::{
    batch_advantages, collect_rollouts, compute_gae, ppo_loss, train, PpoConfig, PpoError, RolloutBatch,
};
use biasbench::reward::synthetic_spec;
use biasbench::rng::SeedTree;
use biasbench::taskgen::{build_training_set, Example, SyntheticTask};
use biasbench::transformer::PolicyModel;
use proptest::prelude::*;
use rand::Rng;

fn train_set(task: SyntheticTask) -> Vec<Example> {
    build_training_set(task, 0.1, 512, &mut SeedTree::new(3).rng("train", 0)).unwrap()
}

fn cfg(batch: usize) -> PpoConfig {
    PpoConfig {
        batch_size: batch,
        minibatch_size: 16,
        ppo_epochs: 1,
        total_ppo_epochs: 4,
        ..PpoConfig::default()
    }
}

fn perturbed(model: &PolicyModel, scale: f32, seed: u64) -> PolicyModel {
    let mut m = model.clone();
    let mut rng = SeedTree::new(seed).rng("perturb", 0);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for v in m.params_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
    m
}

fn rollouts(policy: &PolicyModel, reference: &PolicyModel, batch: usize, beta: f64) -> RolloutBatch {
    let task = SyntheticTask::AdjDupl;
    collect_rollouts(policy, reference, &train_set(task), task, &synthetic_spec(), beta, &cfg(batch), &SeedTree::new(8))
        .unwrap()
}

fn views(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

#[test]
fn batch_size_and_shaping_conservation() {
    let reference = PolicyModel::init(common::tiny_config(), 1).unwrap();
    let policy = perturbed(&reference, 0.2, 2);
    let b = rollouts(&policy, &reference, 48, 0.3);
    assert_eq!(b.len(), 48);
    for i in 0..b.len() {
        let kl: f64 = b.kl(i).iter().sum();
        let shaped: f64 = b.shaped[i].iter().sum();
        assert!((shaped - (b.rewards[i] - 0.3 * kl)).abs() < 1e-12);
        assert!(b.shaped[i][..4].iter().zip(b.kl(i)).all(|(s, k)| *s == -0.3 * k));
    }
}

#[test]
fn ratio_identity_and_zero_initial_policy_loss() {
    let reference = PolicyModel::init(common::tiny_config(), 4).unwrap();
    let policy = perturbed(&reference, 0.3, 5);
    let b = rollouts(&policy, &reference, 64, 0.2);
    let c = cfg(64);
    let (advs, rets) = batch_advantages(&b, &c).unwrap();
    let seqs = b.full_sequences();
    let mut g = Graph::with_params(policy.params());
    let l = ppo_loss(&mut g, &policy, &seqs, &views(&b.logprobs), &views(&advs), &views(&rets), &c).unwrap();
    let worst = l.ratios.iter().map(|r| r.ln().abs()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "log-ratio {worst:e}");
    assert!(l.policy_loss.abs() < 1e-5, "{}", l.policy_loss);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let reference = PolicyModel::init(common::tiny_config(), 6).unwrap();
    let behavior = perturbed(&reference, 0.3, 7);
    let b = rollouts(&behavior, &reference, 8, 0.2);
    // keep every ratio strictly inside the clip band: the loss is piecewise smooth
    let c = PpoConfig { clip_eps: 0.9, ..cfg(8) };
    let (advs, rets) = batch_advantages(&b, &c).unwrap();
    let seqs = b.full_sequences();
    // evaluate at a nearby policy so ratios differ from one
    let policy: PolicyModel<f64> = perturbed(&behavior, 0.02, 9).cast();
    let (old, a, r) = (views(&b.logprobs), views(&advs), views(&rets));
    let worst = grad_check_params(
        policy.params(),
        |g| -> Result<_, PpoError> { Ok(ppo_loss(g, &policy, &seqs, &old, &a, &r, &c)?.total) },
        common::FD_EPS,
    )
    .unwrap();
    assert!(worst < 1e-3, "{worst:e}");
}

#[test]
fn sequence_kl_estimate_is_non_negative() {
    let reference = PolicyModel::init(common::tiny_config(), 10).unwrap();
    let policy = perturbed(&reference, 0.3, 11);
    let b = rollouts(&policy, &reference, 1024, 0.2);
    assert!(b.mean_kl() >= -0.05, "{}", b.mean_kl());
}

#[test]
fn untrained_policy_earns_about_045() {
    let m = PolicyModel::init(common::tiny_config(), 12).unwrap();
    let b = rollouts(&m, &m, 2048, 0.2);
    assert!((b.mean_reward() - 0.45).abs() < 0.05, "{}", b.mean_reward());
    assert_eq!(b.mean_kl(), 0.0);
}

#[test]
fn training_is_deterministic_and_beta_stays_bounded() {
    let task = SyntheticTask::Contains1;
    let data = train_set(task);
    let run = || {
        let reference = PolicyModel::init(common::tiny_config(), 13).unwrap();
        let mut policy = reference.clone();
        train(&mut policy, &reference, &data, task, &synthetic_spec(), &cfg(32), &SeedTree::new(14)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert!(a.rows.iter().all(|r| r.beta > 0.0 && r.beta < 10.0 && (0.0..=1.0).contains(&r.clip_frac)));
}

fn gae_oracle(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            (t..n)
                .map(|k| {
                    let next = if k + 1 < n { v[k + 1] } else { 0.0 };
                    (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * next - v[k])
                })
                .sum()
        })
        .collect()
}

proptest! {
    #[test]
    fn gae_matches_double_loop(
        r in prop::collection::vec(-2.0f64..2.0, 5),
        v in prop::collection::vec(-2.0f64..2.0, 5),
        gamma in 0.5f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let (adv, ret) = compute_gae(&r, &v, gamma, lambda).unwrap();
        let oracle = gae_oracle(&r, &v, gamma, lambda);
        for t in 0..5 {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-6);
            prop_assert!((ret[t] - (oracle[t] + v[t])).abs() < 1e-6);
        }
    }
}

#[test]
fn single_step_gae_and_mismatch() {
    let (a, _) = compute_gae(&[0.7], &[0.2], 1.0, 0.95).unwrap();
    assert!((a[0] - 0.5).abs() < 1e-12);
    assert!(matches!(compute_gae(&[1.0], &[1.0, 2.0], 1.0, 1.0), Err(PpoError::LengthMismatch { .. })));
}
