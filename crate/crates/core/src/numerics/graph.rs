use std::collections::HashMap;

use super::{Element, NumericsError, ParamId, ParamStore, Tensor, LAYER_NORM_EPS};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<E: Element> {
    Input,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddBias(Var, Var),
    Scale(Var, E),
    Exp(Var),
    Square(Var),
    Gelu(Var, Vec<E>),
    Tanh(Var),
    Clamp(Var, E, E),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<E>,
        rstd: Vec<E>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<E>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<E>,
    },
    Gather {
        x: Var,
        flat: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<E: Element> {
    value: Option<Tensor<E>>,
    op: Op<E>,
    needs_grad: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied. One graph
/// per step; it is not meant to be shared across threads.
pub struct Graph<'p, E: Element = f32> {
    params: Option<&'p ParamStore<E>>,
    nodes: Vec<Node<E>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of a scalar loss with respect to parameters and leaf variables.
#[derive(Debug)]
pub struct Gradients<E: Element = f32> {
    params: Vec<Option<Tensor<E>>>,
    leaves: HashMap<usize, Tensor<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var) -> Option<&Tensor<E>> {
        self.leaves.get(&var.0)
    }

    pub fn param_grads(&self) -> &[Option<Tensor<E>>] {
        &self.params
    }

    pub fn param_grads_mut(&mut self) -> &mut [Option<Tensor<E>>] {
        &mut self.params
    }
}

fn check_finite<E: Element>(op: &'static str, t: &Tensor<E>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

#[inline]
fn gelu_parts<E: Element>(x: E) -> (E, E) {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let one = E::one();
    let u = c * (x + a * x * x * x);
    // tanh via exp is markedly faster than libm tanh and accurate to a few ulp here
    let t = if u.abs() > E::from_f64(15.0) { u.signum() } else { one - (one + one) / ((u + u).exp() + one) };
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + E::from_f64(3.0) * a * x * x);
    (y, dy)
}

impl<'p, E: Element> Default for Graph<'p, E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, E: Element> Graph<'p, E> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<E>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.params.expect("param node without store").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Free variable whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter from the bound store. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `a[..., k] · b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 2 || av.rank() == 0 || av.last_dim() != bv.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = Tensor::zeros(&shape);
        E::gemm(m, k, n, av.data(), false, bv.data(), false, out.data_mut(), false);
        check_finite("matmul", &out)?;
        let ng = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(E, E) -> E,
        op: Op<E>,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        check_finite(name, &out)?;
        let ng = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "minimum",
            a,
            b,
            |x, y| if x <= y { x } else { y },
            Op::Minimum(a, b),
        )
    }

    /// Broadcast-add a `[n]` vector over the last axis of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || xv.last_dim() != bv.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let n = bv.numel();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        check_finite("add_bias", &out)?;
        let ng = self.grad_of(x) || self.grad_of(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(E) -> E,
        op: Op<E>,
    ) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        check_finite(name, &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, op, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = E::from_f64(c);
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (data, dy): (Vec<E>, Vec<E>) = xv.data().iter().map(|&v| gelu_parts(v)).unzip();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        check_finite("gelu", &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Gelu(x, dy), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Clamp to `[lo, hi]`; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (E::from_f64(lo), E::from_f64(hi));
        self.unary("clamp", x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Row lookup `table[V, D]` at `ids`, output shape `lead ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], lead: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "embedding",
                lhs: tv.shape().to_vec(),
                rhs: lead.to_vec(),
            });
        }
        if lead.iter().product::<usize>() != ids.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "embedding",
                lhs: vec![ids.len()],
                rhs: lead.to_vec(),
            });
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    extent: vocab,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let out = Tensor::new(shape, data)?;
        let ng = self.grad_of(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.last_dim();
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.rows();
        let mut xhat = vec![E::zero(); xv.numel()];
        let mut rstd = vec![E::zero(); rows];
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = E::from_f64(rs);
            let o = &mut out.data_mut()[r * n..(r + 1) * n];
            for c in 0..n {
                let h = E::from_f64((row[c].as_f64() - mean) * rs);
                xhat[r * n + c] = h;
                o[c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        check_finite("layer_norm", &out)?;
        let ng = self.grad_of(x) || self.grad_of(gamma) || self.grad_of(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Causal multi-head scaled dot-product attention over `[B, T, D]` inputs
    /// (heads are contiguous slices of `D`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", qv, kv)?;
        same_shape("attention", qv, vv)?;
        if qv.rank() != 3 || heads == 0 || qv.shape()[2] % heads != 0 {
            return Err(NumericsError::Invalid {
                op: "attention",
                msg: format!("expected [B, T, D] with D divisible by {heads}, got {:?}", qv.shape()),
            });
        }
        let (b, t, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![E::zero(); b * heads * t * t];
        let mut out = Tensor::zeros(qv.shape());
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut scores = vec![0.0f64; t];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    let qi = &qd[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &kd[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                        let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        *s = dot * scale;
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let prow = &mut probs[((bi * heads + h) * t + i) * t..((bi * heads + h) * t + i + 1) * t];
                    for j in 0..=i {
                        prow[j] = E::from_f64(scores[j] / z);
                    }
                    let orow = &mut out.data_mut()[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    for j in 0..=i {
                        let p = prow[j];
                        let vj = &vd[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        check_finite("attention", &out)?;
        let ng = self.grad_of(q) || self.grad_of(k) || self.grad_of(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        ))
    }

    fn softmax_rows(xv: &Tensor<E>, log: bool) -> Tensor<E> {
        let n = xv.last_dim();
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lz = z.ln();
            let o = &mut out.data_mut()[r * n..(r + 1) * n];
            for (o, v) in o.iter_mut().zip(row) {
                let s = v.as_f64() - max;
                *o = E::from_f64(if log { s - lz } else { s.exp() / z });
            }
        }
        out
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = Self::softmax_rows(self.value(x), false);
        check_finite("softmax", &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let out = Self::softmax_rows(self.value(x), true);
        check_finite("log_softmax", &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::LogSoftmax(x), ng))
    }

    /// Mean negative log-likelihood (nats) of integer `labels` under row-wise
    /// softmax of `logits[..., C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.last_dim());
        if rows != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let logp = Self::softmax_rows(lv, true);
        let mut total = 0.0f64;
        for (r, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(NumericsError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    extent: c,
                });
            }
            total -= logp.data()[r * c + y].as_f64();
        }
        let out = Tensor::scalar(E::from_f64(total / rows.max(1) as f64));
        check_finite("cross_entropy", &out)?;
        let probs = logp.data().iter().map(|v| v.exp()).collect();
        let ng = self.grad_of(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Picks `x[row, col]` for each pair, viewing `x` as `[rows, last_dim]`.
    pub fn gather(&mut self, x: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.last_dim());
        let mut flat = Vec::with_capacity(picks.len());
        for &(r, col) in picks {
            if r >= rows || col >= c {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather",
                    index: r * c + col,
                    extent: rows * c,
                });
            }
            flat.push(r * c + col);
        }
        let out = Tensor::from_vec(flat.iter().map(|&i| xv.data()[i]).collect());
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Gather { x, flat }, ng))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(E::from_f64(self.value(x).sum_f64()));
        check_finite("sum", &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Sum(x), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(NumericsError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(E::from_f64(xv.sum_f64() / xv.numel() as f64));
        check_finite("mean", &out)?;
        let ng = self.grad_of(x);
        Ok(self.push(out, Op::Mean(x), ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), E::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let n_params = self.params.map_or(0, ParamStore::len);
        let mut out = Gradients {
            params: (0..n_params).map(|_| None).collect(),
            leaves: HashMap::new(),
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Param(id) => out.params[id.0] = grads[idx].take(),
                Op::Leaf => {
                    if let Some(g) = grads[idx].take() {
                        out.leaves.insert(idx, g);
                    }
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref();
        let gd = g.data();
        // Returns the accumulation buffer for `v`, or None if `v` needs no grad.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].needs_grad {
                    let shape = self.value(v).shape().to_vec();
                    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut())
                } else {
                    None
                }
            }};
        }
        match &self.nodes[idx].op {
            Op::Input | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                if let Some(da) = buf!(*a) {
                    E::gemm(m, n, k, gd, false, bv.data(), true, da, true);
                }
                if let Some(db) = buf!(*b) {
                    E::gemm(k, m, n, av.data(), true, gd, false, db, true);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(gd).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = buf!(*a) {
                    for i in 0..gd.len() {
                        da[i] += gd[i] * bv[i];
                    }
                }
                if let Some(db) = buf!(*b) {
                    for i in 0..gd.len() {
                        db[i] += gd[i] * av[i];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = buf!(*a) {
                    for i in 0..gd.len() {
                        if av[i] <= bv[i] {
                            da[i] += gd[i];
                        }
                    }
                }
                if let Some(db) = buf!(*b) {
                    for i in 0..gd.len() {
                        if av[i] > bv[i] {
                            db[i] += gd[i];
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
                let n = self.value(*bias).numel();
                if let Some(db) = buf!(*bias) {
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(gd).for_each(|(d, &g)| *d += g * *c);
                }
            }
            Op::Exp(x) => {
                let y = out.unwrap().data();
                if let Some(dx) = buf!(*x) {
                    for i in 0..gd.len() {
                        dx[i] += gd[i] * y[i];
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = E::from_f64(2.0);
                if let Some(dx) = buf!(*x) {
                    for i in 0..gd.len() {
                        dx[i] += two * xv[i] * gd[i];
                    }
                }
            }
            Op::Gelu(x, dy) => {
                if let Some(dx) = buf!(*x) {
                    for i in 0..gd.len() {
                        dx[i] += gd[i] * dy[i];
                    }
                }
            }
            Op::Tanh(x) => {
                let y = out.unwrap().data();
                if let Some(dx) = buf!(*x) {
                    for i in 0..gd.len() {
                        dx[i] += gd[i] * (E::one() - y[i] * y[i]);
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                if let Some(dx) = buf!(*x) {
                    for i in 0..gd.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            dx[i] += gd[i];
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).shape()[1];
                if let Some(dt) = buf!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * d..(r + 1) * d];
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*x).last_dim();
                let gam = self.value(*gamma).data();
                if let Some(dg) = buf!(*gamma) {
                    for (row_g, row_h) in gd.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            dg[c] += row_g[c] * row_h[c];
                        }
                    }
                }
                if let Some(db) = buf!(*beta) {
                    for row_g in gd.chunks(n) {
                        db.iter_mut().zip(row_g).for_each(|(d, &g)| *d += g);
                    }
                }
                if let Some(dx) = buf!(*x) {
                    for (r, (row_g, row_h)) in gd.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_dh = 0.0f64;
                        let mut mean_dhh = 0.0f64;
                        for c in 0..n {
                            let dh = (row_g[c] * gam[c]).as_f64();
                            mean_dh += dh;
                            mean_dhh += dh * row_h[c].as_f64();
                        }
                        mean_dh /= n as f64;
                        mean_dhh /= n as f64;
                        let rs = rstd[r].as_f64();
                        for c in 0..n {
                            let dh = (row_g[c] * gam[c]).as_f64();
                            dx[r * n + c] += E::from_f64(
                                rs * (dh - mean_dh - row_h[c].as_f64() * mean_dhh),
                            );
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, gd, grads),
            Op::Softmax(x) => {
                let y = out.unwrap();
                let n = y.last_dim();
                if let Some(dx) = buf!(*x) {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        for c in 0..n {
                            dx[r * n + c] += yr[c] * (gr[c] - E::from_f64(dot));
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let y = out.unwrap();
                let n = y.last_dim();
                if let Some(dx) = buf!(*x) {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * n..(r + 1) * n];
                        let total: f64 = gr.iter().map(|v| v.as_f64()).sum();
                        for c in 0..n {
                            dx[r * n + c] += gr[c] - yr[c].exp() * E::from_f64(total);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let scale = gd[0] / E::from_f64(labels.len().max(1) as f64);
                if let Some(dl) = buf!(*logits) {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { E::one() } else { E::zero() };
                            dl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Gather { x, flat } => {
                if let Some(dx) = buf!(*x) {
                    for (i, &f) in flat.iter().enumerate() {
                        dx[f] += gd[i];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::Mean(x) => {
                let n = E::from_f64(self.value(*x).numel() as f64);
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().for_each(|d| *d += gd[0] / n);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[E],
        gd: &[E],
        grads: &mut [Option<Tensor<E>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (b, t, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let dh = d / heads;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let mut dq = vec![E::zero(); qv.numel()];
        let mut dk = vec![E::zero(); kv.numel()];
        let mut dv = vec![E::zero(); vv.numel()];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut dp = vec![E::zero(); t];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    let prow = &probs[((bi * heads + h) * t + i) * t..][..t];
                    let go = &gd[(bi * t + i) * d + off..][..dh];
                    let mut dot = E::zero();
                    for j in 0..=i {
                        let vj = &vd[(bi * t + j) * d + off..][..dh];
                        let s: E = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                        dp[j] = s;
                        dot += prow[j] * s;
                        let dvj = &mut dv[(bi * t + j) * d + off..][..dh];
                        for (x, &g) in dvj.iter_mut().zip(go) {
                            *x += prow[j] * g;
                        }
                    }
                    let qi = &qd[(bi * t + i) * d + off..][..dh];
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        let kj = &kd[(bi * t + j) * d + off..][..dh];
                        let dqi = &mut dq[(bi * t + i) * d + off..][..dh];
                        for (x, &kk) in dqi.iter_mut().zip(kj) {
                            *x += ds * kk;
                        }
                        let dkj = &mut dk[(bi * t + j) * d + off..][..dh];
                        for (x, &qq) in dkj.iter_mut().zip(qi) {
                            *x += ds * qq;
                        }
                    }
                }
            }
        }
        for (var, src) in [(q, dq), (k, dk), (v, dv)] {
            if !self.nodes[var.0].needs_grad {
                continue;
            }
            let shape = self.value(var).shape().to_vec();
            let dst = grads[var.0].get_or_insert_with(|| Tensor::zeros(&shape));
            dst.data_mut().iter_mut().zip(&src).for_each(|(a, &b)| *a += b);
        }
    }
}
