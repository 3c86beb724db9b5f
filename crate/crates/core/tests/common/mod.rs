//! Shared helpers for the integration tests and the acceptance runner.
#![allow(dead_code)]

use biasbench::numerics::{grad_check, grad_check_params, Graph, NumericsError, Tensor, Var};
use biasbench::rng::{SeedTree, StreamRng};
use biasbench::transformer::{ModelConfig, ModelError, PolicyModel, TokenBatch};
use rand::Rng;

pub const FD_EPS: f64 = 1e-6;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        ..ModelConfig::desk()
    }
}

fn rand_tensor(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

/// Values at least `gap` away from every element of `avoid` (ties would put
/// a kink under the finite-difference stencil).
fn rand_away(shape: &[usize], avoid: &[f64], gap: f64, rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-1.5..1.5);
        if avoid.iter().all(|a| (v - a).abs() > gap) {
            break v;
        }
    })
}

/// Contracts an op's output with fixed random weights so every output
/// coordinate contributes with a distinct coefficient.
fn contract(g: &mut Graph<'static, f64>, y: Var, w: &Tensor<f64>) -> Result<Var, NumericsError> {
    let w = g.input(w.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Op = Box<dyn Fn(&mut Graph<'static, f64>, Var) -> Result<Var, NumericsError>>;

/// One random instance of a primitive: the input being differentiated and
/// the function mapping it to a scalar.
fn instance(name: &str, rng: &mut StreamRng) -> (Tensor<f64>, Op) {
    let r = rng.random_range(1..4usize);
    let c = rng.random_range(2..5usize);
    let shape = [r, c];
    let other = rand_tensor(&shape, rng);
    let w = rand_tensor(&shape, rng);
    match name {
        "matmul" => {
            let k = rng.random_range(1..4usize);
            let b = rand_tensor(&[c, k], rng);
            let w = rand_tensor(&[r, k], rng);
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let b = g.input(b.clone());
                let y = g.matmul(x, b)?;
                contract(g, y, &w)
            }))
        }
        "matmul_rhs" => {
            let k = rng.random_range(1..4usize);
            let a = rand_tensor(&[r, k], rng);
            (rand_tensor(&[k, c], rng), Box::new(move |g, x| {
                let a = g.input(a.clone());
                let y = g.matmul(a, x)?;
                contract(g, y, &w)
            }))
        }
        "add" | "sub" | "mul" => {
            let name = name.to_string();
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let o = g.input(other.clone());
                let y = match name.as_str() {
                    "add" => g.add(o, x)?,
                    "sub" => g.sub(o, x)?,
                    _ => g.mul(x, o)?,
                };
                contract(g, y, &w)
            }))
        }
        "minimum" => {
            let x = rand_away(&shape, &[], 0.0, rng);
            let other = Tensor::from_fn(&shape, |i| loop {
                let v: f64 = rng.random_range(-1.5..1.5);
                if (v - x.data()[i]).abs() > 1e-3 {
                    break v;
                }
            });
            (x, Box::new(move |g, x| {
                let o = g.input(other.clone());
                let y = g.minimum(x, o)?;
                contract(g, y, &w)
            }))
        }
        "add_bias" => {
            let base = rand_tensor(&shape, rng);
            (rand_tensor(&[c], rng), Box::new(move |g, b| {
                let x = g.input(base.clone());
                let y = g.add_bias(x, b)?;
                contract(g, y, &w)
            }))
        }
        "scale" => {
            let k: f64 = rng.random_range(-2.0..2.0);
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = g.scale(x, k)?;
                contract(g, y, &w)
            }))
        }
        "exp" | "square" | "gelu" | "tanh" => {
            let name = name.to_string();
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = match name.as_str() {
                    "exp" => g.exp(x)?,
                    "square" => g.square(x)?,
                    "gelu" => g.gelu(x)?,
                    _ => g.tanh(x)?,
                };
                contract(g, y, &w)
            }))
        }
        "clamp" => (rand_away(&shape, &[-0.5, 0.7], 1e-3, rng), Box::new(move |g, x| {
            let y = g.clamp(x, -0.5, 0.7)?;
            contract(g, y, &w)
        })),
        "embedding" => {
            let v = rng.random_range(2..6usize);
            let ids: Vec<usize> = (0..r * 2).map(|_| rng.random_range(0..v)).collect();
            let w = rand_tensor(&[r, 2, c], rng);
            (rand_tensor(&[v, c], rng), Box::new(move |g, t| {
                let y = g.embedding(t, &ids, &[r, 2])?;
                contract(g, y, &w)
            }))
        }
        "layer_norm" | "layer_norm_gain" => {
            let gain = rand_tensor(&[c], rng);
            let bias = rand_tensor(&[c], rng);
            let x0 = rand_tensor(&shape, rng);
            if name == "layer_norm" {
                (x0, Box::new(move |g, x| {
                    let (gv, bv) = (g.input(gain.clone()), g.input(bias.clone()));
                    let y = g.layer_norm(x, gv, bv)?;
                    contract(g, y, &w)
                }))
            } else {
                (gain, Box::new(move |g, gv| {
                    let x = g.input(x0.clone());
                    let bv = g.input(bias.clone());
                    let y = g.layer_norm(x, gv, bv)?;
                    contract(g, y, &w)
                }))
            }
        }
        "attention_q" | "attention_k" | "attention_v" => {
            let (b, t, d, h) = (2, 4, 8, 2);
            let q = rand_tensor(&[b, t, d], rng);
            let k = rand_tensor(&[b, t, d], rng);
            let v = rand_tensor(&[b, t, d], rng);
            let w = rand_tensor(&[b, t, d], rng);
            let which = name.to_string();
            let x0 = match name {
                "attention_q" => q.clone(),
                "attention_k" => k.clone(),
                _ => v.clone(),
            };
            (x0, Box::new(move |g, x| {
                let (qv, kv, vv) = match which.as_str() {
                    "attention_q" => (x, g.input(k.clone()), g.input(v.clone())),
                    "attention_k" => (g.input(q.clone()), x, g.input(v.clone())),
                    _ => (g.input(q.clone()), g.input(k.clone()), x),
                };
                let y = g.attention(qv, kv, vv, h)?;
                contract(g, y, &w)
            }))
        }
        "softmax" | "log_softmax" => {
            let name = name.to_string();
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = if name == "softmax" { g.softmax(x)? } else { g.log_softmax(x)? };
                contract(g, y, &w)
            }))
        }
        "cross_entropy" => {
            let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
            (rand_tensor(&shape, rng), Box::new(move |g, x| g.cross_entropy(x, &labels)))
        }
        "gather" => {
            let picks: Vec<(usize, usize)> = (0..3).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect();
            let w = rand_tensor(&[3], rng);
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = g.gather(x, &picks)?;
                contract(g, y, &w)
            }))
        }
        "sum" | "mean" => {
            let name = name.to_string();
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = g.mul(x, x)?;
                if name == "sum" { g.sum(y) } else { g.mean(y) }
            }))
        }
        "reshape" => {
            let w = rand_tensor(&[r * c], rng);
            (rand_tensor(&shape, rng), Box::new(move |g, x| {
                let y = g.reshape(x, &[r * c])?;
                contract(g, y, &w)
            }))
        }
        other => panic!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: &[&str] = &[
    "matmul", "matmul_rhs", "add", "sub", "mul", "minimum", "add_bias", "scale", "exp", "square", "gelu", "tanh",
    "clamp", "embedding", "layer_norm", "layer_norm_gain", "attention_q", "attention_k", "attention_v", "softmax",
    "log_softmax", "cross_entropy", "gather", "sum", "mean", "reshape",
];

/// Worst relative error per primitive over `trials` random instances.
pub fn primitive_checks(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let seeds = SeedTree::new(seed);
    PRIMITIVES
        .iter()
        .map(|&name| {
            let mut rng = seeds.rng(&format!("gradcheck/{name}"), 0);
            let worst = (0..trials)
                .map(|_| {
                    let (x, f) = instance(name, &mut rng);
                    grad_check(|g, v| f(g, v), &x, FD_EPS).unwrap_or(f64::INFINITY)
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Worst relative error of the full model loss (next-token cross-entropy
/// plus a value-head term) over every parameter coordinate.
pub fn model_check(trials: usize, seed: u64) -> f64 {
    let seeds = SeedTree::new(seed);
    (0..trials)
        .map(|i| {
            let model = PolicyModel::init(tiny_config(), seed + i as u64).unwrap();
            // perturb away from the symmetric initialization
            let mut model: PolicyModel<f64> = model.cast();
            let mut rng = seeds.rng("model-check", i as u64);
            let ids: Vec<_> = model.params().ids().collect();
            for id in ids {
                for v in model.params_mut().get_mut(id).data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            let rows: Vec<Vec<usize>> = (0..2).map(|_| (0..5).map(|_| rng.random_range(0..10)).collect()).collect();
            let batch = TokenBatch::from_rows(&rows).unwrap();
            let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..10)).collect();
            let m = &model;
            grad_check_params(
                model.params(),
                |g| -> Result<Var, ModelError> {
                    let out = m.forward(g, &batch)?;
                    let ce = g.cross_entropy(out.logits, &labels)?;
                    let v = g.square(out.values.expect("value head"))?;
                    let v = g.mean(v)?;
                    let v = g.scale(v, 0.1)?;
                    Ok(g.add(ce, v)?)
                },
                FD_EPS,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// A run configuration small enough for end-to-end CLI runs in seconds.
pub const TINY_TOML: &str = r#"
seed = 11
task = "contains-1"
p = 0.5

[model]
n_layers = 1
d_model = 16
n_heads = 2
d_ff = 32

[pretrain]
steps = 20
batch_size = 32

[probe]
n = 64
seeds = 2
steps = 20

[ppo]
batch_size = 32
minibatch_size = 16
total_ppo_epochs = 2

[data]
n_train = 128
n_test_per_quadrant = 16

[sweep]
tasks = ["contains-1", "first-last"]
ps = [0.0, 0.5]
seeds = 2

[fit]
resamples = 50
permutations = 200
"#;

/// Lines long enough for every text task.
pub fn corpus(lines: usize) -> String {
    (0..lines)
        .map(|i| {
            let words: Vec<String> = (0..14).map(|j| format!("w{}", (i * 7 + j * 3) % 97)).collect();
            words.join(if i % 3 == 0 { "  " } else { " " }) + "\n"
        })
        .collect()
}

/// Runs the CLI binary with `args`.
pub fn biasbench(args: &[&std::ffi::OsStr]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_biasbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn biasbench")
}
