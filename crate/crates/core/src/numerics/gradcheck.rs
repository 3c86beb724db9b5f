use super::{Element, Graph, NumericsError, ParamStore, Tensor, Var};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Gradients this small on both sides count as agreeing: an exactly-zero
/// derivative (a bias under softmax shift invariance, say) meets pure
/// finite-difference rounding noise there.
pub const NOISE_FLOOR: f64 = 1e-8;

/// [`relative_error`], or zero when both values sit under [`NOISE_FLOOR`].
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs().max(numeric.abs()) < NOISE_FLOOR {
        0.0
    } else {
        relative_error(analytic, numeric)
    }
}

/// Compares the reverse-mode gradient of the scalar `f(x)` against central
/// finite differences with step `eps`, returning the worst coordinate's
/// [`gradient_error`].
pub fn grad_check<E, F>(f: F, x: &Tensor<E>, eps: f64) -> Result<f64, NumericsError>
where
    E: Element,
    F: Fn(&mut Graph<'static, E>, Var) -> Result<Var, NumericsError>,
{
    let eval = |t: Tensor<E>| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let v = g.input(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item().as_f64())
    };

    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let loss = f(&mut g, v)?;
    let grads = g.backward(loss)?;
    let zeros = Tensor::zeros(x.shape());
    let analytic = grads.wrt(v).unwrap_or(&zeros);

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += E::from_f64(eps);
        let mut minus = x.clone();
        minus.data_mut()[i] -= E::from_f64(eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(gradient_error(analytic.data()[i].as_f64(), numeric));
    }
    Ok(worst)
}

/// [`grad_check`] over every coordinate of every parameter in `store`; `f`
/// builds the scalar loss on a graph bound to the (perturbed) store.
pub fn grad_check_params<E, F, Er>(store: &ParamStore<E>, f: F, eps: f64) -> Result<f64, Er>
where
    E: Element,
    Er: From<NumericsError>,
    F: for<'a> Fn(&mut Graph<'a, E>) -> Result<Var, Er>,
{
    let eval = |s: &ParamStore<E>| -> Result<f64, Er> {
        let mut g = Graph::with_params(s);
        let out = f(&mut g)?;
        Ok(g.value(out).item().as_f64())
    };
    let grads = {
        let mut g = Graph::with_params(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut worst = 0.0f64;
    let mut work = store.clone();
    for id in store.ids() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + E::from_f64(eps);
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - E::from_f64(eps);
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.param(id).map_or(0.0, |t| t.data()[i].as_f64());
            worst = worst.max(gradient_error(analytic, numeric));
        }
    }
    Ok(worst)
}
