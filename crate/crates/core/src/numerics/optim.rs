use super::{Element, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction; decoupled weight decay when `weight_decay > 0`.
#[derive(Debug, Clone)]
pub struct Adam<E: Element = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig, params: &ParamStore<E>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<E>, grads: &Gradients<E>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (E::from_f64(c.beta1), E::from_f64(c.beta2));
        let (one_b1, one_b2) = (E::from_f64(1.0 - c.beta1), E::from_f64(1.0 - c.beta2));
        let step_size = E::from_f64(c.lr / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let eps = E::from_f64(c.eps);
        let decay = E::from_f64(1.0 - c.lr * c.weight_decay);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.param(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                if c.weight_decay > 0.0 {
                    *p *= decay;
                }
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Rescales all parameter gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<E: Element>(grads: &mut Gradients<E>, max_norm: f64) -> f64 {
    let norm = grads
        .param_grads()
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = E::from_f64(max_norm / norm);
        for t in grads.param_grads_mut().iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
