mod common;

use biasbench::cli::{load_model, save_model, Checkpoint};
use biasbench::rng::SeedTree;
use biasbench::transformer::{ModelConfig, ModelError, PolicyModel, Sampling, TokenBatch};
use rand::Rng;

fn softmax(row: &[f32]) -> Vec<f64> {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[test]
fn future_tokens_never_change_past_logits() {
    let m = PolicyModel::init(common::tiny_config(), 0).unwrap();
    let mut rng = SeedTree::new(1).rng("seq", 0);
    for _ in 0..10 {
        let a: Vec<usize> = (0..15).map(|_| rng.random_range(0..10)).collect();
        let j = rng.random_range(1..15);
        let mut b = a.clone();
        b[j] = (b[j] + 1 + rng.random_range(0..9)) % 10;
        let la = m.logits(&TokenBatch::from_rows(&[a]).unwrap()).unwrap();
        let lb = m.logits(&TokenBatch::from_rows(&[b]).unwrap()).unwrap();
        assert_eq!(la.data()[..j * 10], lb.data()[..j * 10], "position {j}");
        assert_ne!(la.data()[j * 10..], lb.data()[j * 10..]);
    }
}

#[test]
fn rows_are_independent_of_batch_composition() {
    let m = PolicyModel::init(common::tiny_config(), 2).unwrap();
    let rows = vec![vec![1, 2, 3, 4, 5], vec![9, 8, 7, 6, 5], vec![0, 0, 0, 0, 0]];
    let joint = m.logits(&TokenBatch::from_rows(&rows).unwrap()).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let alone = m.logits(&TokenBatch::from_rows(std::slice::from_ref(r)).unwrap()).unwrap();
        assert_eq!(alone.data(), &joint.data()[i * 50..(i + 1) * 50]);
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let m = PolicyModel::init(common::tiny_config(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bbck");
    save_model(&path, &m).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.config(), m.config());
    for id in m.params().ids() {
        let (a, b) = (m.params().get(id).data(), back.params().get(id).data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let batch = TokenBatch::from_rows(&[vec![3, 1, 4, 1, 5, 9, 2, 6]]).unwrap();
    assert_eq!(m.logits(&batch).unwrap(), back.logits(&batch).unwrap());
    let bytes = Checkpoint::from_model(&m).to_bytes().unwrap();
    assert_eq!(bytes, Checkpoint::from_model(&back).to_bytes().unwrap());
}

#[test]
fn sampling_frequencies_match_softmax() {
    let m = PolicyModel::init(common::tiny_config(), 4).unwrap();
    let prompt = vec![5, 3, 8, 1, 0, 2, 7, 7, 4, 6];
    let logits = m.logits(&TokenBatch::from_rows(&[prompt.clone()]).unwrap()).unwrap();
    let probs = softmax(&logits.data()[9 * 10..]);
    let n = 20_000;
    let prompts = vec![prompt; n];
    let tree = SeedTree::new(5);
    let mut rngs: Vec<_> = (0..n as u64).map(|i| tree.rng("draw", i)).collect();
    let out = m.sample_batch(&prompts, 1, Sampling::Temperature(1.0), &mut rngs).unwrap();
    let mut counts = [0usize; 10];
    for t in &out.tokens {
        counts[t[0]] += 1;
    }
    for (k, &p) in probs.iter().enumerate() {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[k] as f64 - n as f64 * p).abs() < 3.0 * sigma + 1.0, "token {k}");
    }
    // reported log-probabilities are the temperature-1 values
    for (t, lp) in out.tokens.iter().zip(&out.logprobs) {
        assert!((lp[0] as f64 - probs[t[0]].ln()).abs() < 1e-5);
    }
}

#[test]
fn greedy_follows_argmax() {
    let m = PolicyModel::init(common::tiny_config(), 6).unwrap();
    let prompts = vec![vec![1, 1, 2, 3, 5, 8, 3, 1, 4, 5], vec![0, 9, 8, 7, 6, 5, 4, 3, 2, 1]];
    let mut rngs: Vec<_> = (0..2).map(|i| SeedTree::new(0).rng("g", i)).collect();
    let out = m.sample_batch(&prompts, 5, Sampling::Greedy, &mut rngs).unwrap();
    for (p, toks) in prompts.iter().zip(&out.tokens) {
        let mut seq = p.clone();
        for &tok in toks {
            let l = m.logits(&TokenBatch::from_rows(&[seq.clone()]).unwrap()).unwrap();
            let last = &l.data()[(seq.len() - 1) * 10..][..10];
            let best = (0..10).fold(0, |b, i| if last[i] > last[b] { i } else { b });
            assert_eq!(tok, best);
            seq.push(tok);
        }
    }
}

#[test]
fn hidden_states_have_expected_shape_and_bounds() {
    let m = PolicyModel::init(common::tiny_config(), 7).unwrap();
    let batch = TokenBatch::from_rows(&[vec![1; 10], vec![2; 10], vec![3; 10]]).unwrap();
    let h = m.hidden_at(&batch, 2, 9).unwrap();
    assert_eq!(h.shape(), &[3, 8]);
    assert!(matches!(m.hidden_at(&batch, 3, 0), Err(ModelError::IndexOutOfRange { .. })));
    assert!(matches!(m.hidden_at(&batch, 0, 10), Err(ModelError::IndexOutOfRange { .. })));
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = PolicyModel::init(common::tiny_config(), 8).unwrap();
    assert!(m.logits(&TokenBatch::from_rows(&[vec![10]]).unwrap()).is_err());
    assert!(m.logits(&TokenBatch::from_rows(&[vec![0; 17]]).unwrap()).is_err());
    assert!(TokenBatch::from_rows(&[vec![0, 1], vec![0]]).is_err());
    let bad = ModelConfig { n_heads: 3, ..common::tiny_config() };
    assert!(PolicyModel::init(bad, 0).is_err());
    let mut rng = vec![SeedTree::new(0).rng("t", 0)];
    assert!(matches!(
        m.sample_batch(&[vec![1]], 1, Sampling::Temperature(0.0), &mut rng),
        Err(ModelError::BadTemperature(_))
    ));
}
