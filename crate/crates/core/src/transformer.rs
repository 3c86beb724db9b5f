//! Decoder-only transformer policy: token + learned position embeddings,
//! pre-norm blocks (causal multi-head attention, GELU feed-forward), a final
//! layer norm, a language-model head and a per-position scalar value head.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{Element, Graph, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("ragged batch: expected {expected} tokens, got {got}")]
    Ragged { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("parameter table does not match config: {0}")]
    Layout(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub value_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 4 layers, width 128: the CPU-friendly default.
    pub fn desk() -> Self {
        Self {
            vocab_size: 10,
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 16,
            value_head: true,
        }
    }

    /// 4 layers, width 256, feed-forward widened to land near 15M parameters.
    pub fn large() -> Self {
        Self {
            vocab_size: 10,
            n_layers: 4,
            d_model: 256,
            n_heads: 8,
            d_ff: 6912,
            max_seq_len: 16,
            value_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size == 0 || self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad(format!("max_seq_len {} too small", self.max_seq_len));
        }
        Ok(())
    }

    /// Closed-form parameter count for this layout.
    pub fn param_count(&self) -> usize {
        let (v, d, t, l, f) = (
            self.vocab_size,
            self.d_model,
            self.max_seq_len,
            self.n_layers,
            self.d_ff,
        );
        let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let head = d * v + v;
        let value = if self.value_head { d + 1 } else { 0 };
        v * d + t * d + l * per_layer + 2 * d + head + value
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    lm_w: ParamId,
    lm_b: ParamId,
    value: Option<(ParamId, ParamId)>,
}

/// Parameter names and shapes in canonical order.
fn param_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.d_model, c.d_ff);
    let mut out = vec![
        ("tok_emb".to_string(), vec![c.vocab_size, d]),
        ("pos_emb".to_string(), vec![c.max_seq_len, d]),
    ];
    for l in 0..c.n_layers {
        let p = |n: &str| format!("h{l}.{n}");
        out.extend([
            (p("ln1.g"), vec![d]),
            (p("ln1.b"), vec![d]),
            (p("attn.wq"), vec![d, d]),
            (p("attn.bq"), vec![d]),
            (p("attn.wk"), vec![d, d]),
            (p("attn.bk"), vec![d]),
            (p("attn.wv"), vec![d, d]),
            (p("attn.bv"), vec![d]),
            (p("attn.wo"), vec![d, d]),
            (p("attn.bo"), vec![d]),
            (p("ln2.g"), vec![d]),
            (p("ln2.b"), vec![d]),
            (p("ffn.w1"), vec![d, f]),
            (p("ffn.b1"), vec![f]),
            (p("ffn.w2"), vec![f, d]),
            (p("ffn.b2"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.g".to_string(), vec![d]),
        ("ln_f.b".to_string(), vec![d]),
        ("lm_head.w".to_string(), vec![d, c.vocab_size]),
        ("lm_head.b".to_string(), vec![c.vocab_size]),
    ]);
    if c.value_head {
        out.extend([
            ("value_head.w".to_string(), vec![d, 1]),
            ("value_head.b".to_string(), vec![1]),
        ]);
    }
    out
}

impl Layout {
    fn resolve<E: Element>(c: &ModelConfig, store: &ParamStore<E>) -> Result<Self> {
        let expected = param_shapes(c);
        if store.len() != expected.len() {
            return Err(ModelError::Layout(format!(
                "expected {} tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (name, shape) in &expected {
            let id = store
                .id(name)
                .ok_or_else(|| ModelError::Layout(format!("missing {name}")))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Layout(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    store.get(id).shape()
                )));
            }
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let blocks = (0..c.n_layers)
            .map(|l| {
                let p = |n: &str| id(&format!("h{l}.{n}"));
                Block {
                    ln1_g: p("ln1.g"),
                    ln1_b: p("ln1.b"),
                    wq: p("attn.wq"),
                    bq: p("attn.bq"),
                    wk: p("attn.wk"),
                    bk: p("attn.bk"),
                    wv: p("attn.wv"),
                    bv: p("attn.bv"),
                    wo: p("attn.wo"),
                    bo: p("attn.bo"),
                    ln2_g: p("ln2.g"),
                    ln2_b: p("ln2.b"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                }
            })
            .collect();
        Ok(Self {
            tok_emb: id("tok_emb"),
            pos_emb: id("pos_emb"),
            blocks,
            lnf_g: id("ln_f.g"),
            lnf_b: id("ln_f.b"),
            lm_w: id("lm_head.w"),
            lm_b: id("lm_head.b"),
            value: c
                .value_head
                .then(|| (id("value_head.w"), id("value_head.b"))),
        })
    }
}

/// A batch of equal-length token sequences, row-major `[batch, len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
}

impl TokenBatch {
    pub fn from_rows<R: AsRef<[usize]>>(rows: &[R]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.as_ref().len());
        let mut ids = Vec::with_capacity(rows.len() * len);
        for r in rows {
            let r = r.as_ref();
            if r.len() != len {
                return Err(ModelError::Ragged {
                    expected: len,
                    got: r.len(),
                });
            }
            ids.extend_from_slice(r);
        }
        Ok(Self {
            batch: rows.len(),
            len,
            ids,
        })
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }
}

/// Graph handles produced by [`PolicyModel::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[batch, len, vocab]`
    pub logits: Var,
    /// `[batch, len]`, present when the config has a value head.
    pub values: Option<Var>,
    /// `hidden[l]` for `l < n_layers` is block `l`'s normalized input; `hidden[n_layers]`
    /// is the final normalized state fed to the heads. Each is `[batch, len, d_model]`.
    pub hidden: Vec<Var>,
}

/// Transformer parameters plus their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<E: Element = f32> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<E>,
}

impl PolicyModel<f32> {
    /// Scaled-normal initialization (std 0.02, residual output projections
    /// additionally scaled by `1/sqrt(2·n_layers)`), zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedTree::new(seed).rng("model-init", 0);
        let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let mut store = ParamStore::new();
        for (name, shape) in param_shapes(&config) {
            let is_gain = name.ends_with(".g");
            let is_bias = shape.len() == 1;
            let t = if is_gain {
                Tensor::full(&shape, 1.0)
            } else if is_bias {
                Tensor::zeros(&shape)
            } else {
                let std = if name.ends_with("attn.wo") || name.ends_with("ffn.w2") {
                    0.02 * resid_scale
                } else {
                    0.02
                };
                Tensor::from_fn(&shape, |_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (z * std) as f32
                })
            };
            store.insert(name, t);
        }
        Self::from_parts(config, store)
    }
}

impl<E: Element> PolicyModel<E> {
    pub fn from_parts(config: ModelConfig, params: ParamStore<E>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<F: Element>(&self) -> PolicyModel<F> {
        PolicyModel {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn value_head_params(&self) -> Option<(ParamId, ParamId)> {
        self.layout.value
    }

    pub fn check_tokens(&self, batch: &TokenBatch) -> Result<()> {
        if batch.len > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len: batch.len,
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records a full forward pass on `g`, which must be bound to `self.params()`.
    pub fn forward(&self, g: &mut Graph<'_, E>, batch: &TokenBatch) -> Result<Forward> {
        self.check_tokens(batch)?;
        let c = &self.config;
        let ly = &self.layout;
        let (b, t, d) = (batch.batch, batch.len, c.d_model);

        let tok_table = g.param(ly.tok_emb);
        let pos_table = g.param(ly.pos_emb);
        let tok = g.embedding(tok_table, &batch.ids, &[b, t])?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = g.embedding(pos_table, &positions, &[b, t])?;
        let mut x = g.add(tok, pos)?;

        let mut hidden = Vec::with_capacity(c.n_layers + 1);
        for blk in &ly.blocks {
            let (g1, b1) = (g.param(blk.ln1_g), g.param(blk.ln1_b));
            let h = g.layer_norm(x, g1, b1)?;
            hidden.push(h);
            let q = linear(g, h, blk.wq, blk.bq)?;
            let k = linear(g, h, blk.wk, blk.bk)?;
            let v = linear(g, h, blk.wv, blk.bv)?;
            let a = g.attention(q, k, v, c.n_heads)?;
            let a = linear(g, a, blk.wo, blk.bo)?;
            x = g.add(x, a)?;

            let (g2, b2) = (g.param(blk.ln2_g), g.param(blk.ln2_b));
            let h = g.layer_norm(x, g2, b2)?;
            let f = linear(g, h, blk.w1, blk.b1)?;
            let f = g.gelu(f)?;
            let f = linear(g, f, blk.w2, blk.b2)?;
            x = g.add(x, f)?;
        }
        let (gf, bf) = (g.param(ly.lnf_g), g.param(ly.lnf_b));
        let hf = g.layer_norm(x, gf, bf)?;
        hidden.push(hf);
        debug_assert_eq!(g.shape(hf), &[b, t, d]);

        let logits = linear(g, hf, ly.lm_w, ly.lm_b)?;
        let values = match ly.value {
            Some((w, bias)) => {
                let v = linear(g, hf, w, bias)?;
                Some(g.reshape(v, &[b, t])?)
            }
            None => None,
        };
        Ok(Forward {
            logits,
            values,
            hidden,
        })
    }

    /// Logits `[batch, len, vocab]` without keeping the graph.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor<E>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, batch)?;
        Ok(g.value(out.logits).clone())
    }

    /// Normalized activation at `(layer, position)` for every sequence in the
    /// batch, `[batch, d_model]`. `layer == n_layers` is the final state.
    pub fn hidden_at(&self, batch: &TokenBatch, layer: usize, position: usize) -> Result<Tensor<E>> {
        if layer > self.config.n_layers {
            return Err(ModelError::IndexOutOfRange {
                what: "layer",
                index: layer,
                limit: self.config.n_layers,
            });
        }
        if position >= batch.len {
            return Err(ModelError::IndexOutOfRange {
                what: "position",
                index: position,
                limit: batch.len,
            });
        }
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, batch)?;
        let h = g.value(out.hidden[layer]);
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(batch.batch * d);
        for b in 0..batch.batch {
            data.extend_from_slice(h.row(b * batch.len + position));
        }
        Ok(Tensor::new(vec![batch.batch, d], data)?)
    }
}

fn linear<E: Element>(g: &mut Graph<'_, E>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w)?;
    Ok(g.add_bias(y, b)?)
}

/// How the next token is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Categorical draw from `softmax(logits / temperature)`.
    Temperature(f64),
    /// Argmax (the zero-temperature limit).
    Greedy,
}

/// Completions and the temperature-1 log-probabilities of each chosen token.
#[derive(Debug, Clone, PartialEq)]
pub struct Completions {
    pub tokens: Vec<Vec<usize>>,
    pub logprobs: Vec<Vec<f32>>,
}

fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lz = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v as f64 - max - lz).collect()
}

impl PolicyModel<f32> {
    /// Autoregressively extends every prompt by `n_new` tokens. `rngs[i]`
    /// drives sequence `i`, so results do not depend on batch composition.
    pub fn sample_batch<R: Rng>(
        &self,
        prompts: &[Vec<usize>],
        n_new: usize,
        sampling: Sampling,
        rngs: &mut [R],
    ) -> Result<Completions> {
        if let Sampling::Temperature(t) = sampling {
            if !(t > 0.0) || !t.is_finite() {
                return Err(ModelError::BadTemperature(t));
            }
        }
        if n_new == 0 {
            return Err(ModelError::Config("n_new must be at least 1".into()));
        }
        assert_eq!(rngs.len(), prompts.len(), "one rng per prompt");
        let mut seqs: Vec<Vec<usize>> = prompts.to_vec();
        let mut tokens = vec![Vec::with_capacity(n_new); prompts.len()];
        let mut logprobs = vec![Vec::with_capacity(n_new); prompts.len()];
        let v = self.config.vocab_size;
        for _ in 0..n_new {
            let batch = TokenBatch::from_rows(&seqs)?;
            let logits = self.logits(&batch)?;
            let last = batch.len - 1;
            for (i, seq) in seqs.iter_mut().enumerate() {
                let row = &logits.data()[(i * batch.len + last) * v..][..v];
                let lp = log_softmax_row(row);
                let choice = match sampling {
                    Sampling::Greedy => argmax(&lp),
                    Sampling::Temperature(t) => {
                        let scaled: Vec<f64> = row.iter().map(|&x| x as f64 / t).collect();
                        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let w: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
                        WeightedIndex::new(&w)
                            .expect("finite positive weights")
                            .sample(&mut rngs[i])
                    }
                };
                seq.push(choice);
                tokens[i].push(choice);
                logprobs[i].push(lp[choice] as f32);
            }
        }
        Ok(Completions { tokens, logprobs })
    }

    /// Single-prompt convenience wrapper around [`Self::sample_batch`].
    pub fn sample_completion<R: Rng>(
        &self,
        prompt: &[usize],
        n_new: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        let mut out = self.sample_batch(
            &[prompt.to_vec()],
            n_new,
            Sampling::Temperature(temperature),
            std::slice::from_mut(rng),
        )?;
        Ok((out.tokens.remove(0), out.logprobs.remove(0)))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            n_layers: 1,
            d_model: 4,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 6,
            value_head: true,
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let m = PolicyModel::init(tiny(), 0).unwrap();
        // hand count for vocab 10, d 4, 1 layer, d_ff 8, T 6, value head:
        // tok 40 + pos 24 + ln1 8 + attn 4*(16+4)=80 + ln2 8 + ffn (32+8)+(32+4)=76
        // + ln_f 8 + lm (40+10) + value (4+1) = 299
        assert_eq!(m.num_params(), 299);
        assert_eq!(tiny().param_count(), 299);
        assert_eq!(ModelConfig::desk().param_count(), PolicyModel::init(ModelConfig::desk(), 0).unwrap().num_params());
    }

    #[test]
    fn reference_sized_configs() {
        let c = ModelConfig {
            d_model: 256,
            n_heads: 8,
            d_ff: 1024,
            ..ModelConfig::desk()
        };
        let n = c.param_count() as f64;
        assert!((3.1e6..3.3e6).contains(&n), "{n}");
        let p = ModelConfig::large().param_count() as f64;
        assert!((14.5e6..15.5e6).contains(&p), "{p}");
    }

    #[test]
    fn init_is_deterministic() {
        let a = PolicyModel::init(tiny(), 5).unwrap();
        let b = PolicyModel::init(tiny(), 5).unwrap();
        let c = PolicyModel::init(tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(matches!(PolicyModel::init(c, 0), Err(ModelError::Config(_))));
        c = tiny();
        c.d_model = 0;
        assert!(PolicyModel::init(c, 0).is_err());
    }

    #[test]
    fn bad_tokens_and_lengths() {
        let m = PolicyModel::init(tiny(), 0).unwrap();
        let b = TokenBatch::from_rows(&[vec![1, 2, 10]]).unwrap();
        assert!(matches!(m.logits(&b), Err(ModelError::TokenOutOfRange { id: 10, .. })));
        let b = TokenBatch::from_rows(&[vec![1; 7]]).unwrap();
        assert!(matches!(m.logits(&b), Err(ModelError::TooLong { .. })));
        assert!(TokenBatch::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn shapes() {
        let m = PolicyModel::init(tiny(), 0).unwrap();
        let b = TokenBatch::from_rows(&[vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        let mut g = Graph::with_params(m.params());
        let f = m.forward(&mut g, &b).unwrap();
        assert_eq!(g.shape(f.logits), &[2, 3, 10]);
        assert_eq!(g.shape(f.values.unwrap()), &[2, 3]);
        assert_eq!(f.hidden.len(), 2);
        let h = m.hidden_at(&b, 1, 2).unwrap();
        assert_eq!(h.shape(), &[2, 4]);
        assert!(m.hidden_at(&b, 2, 0).is_err());
        assert!(m.hidden_at(&b, 1, 3).is_err());
    }

    #[test]
    fn temperature_must_be_positive() {
        let m = PolicyModel::init(tiny(), 0).unwrap();
        let mut rng = SeedTree::new(0).rng("s", 0);
        assert!(matches!(
            m.sample_completion(&[1, 2], 2, 0.0, &mut rng),
            Err(ModelError::BadTemperature(_))
        ));
        assert!(m.sample_completion(&[1, 2], 2, -1.0, &mut rng).is_err());
    }
}
