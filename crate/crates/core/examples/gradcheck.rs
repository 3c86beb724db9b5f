//! Reverse-mode gradients of a small expression against finite differences.

use biasbench::numerics::{grad_check, Graph, NumericsError, Tensor};

fn main() -> Result<(), NumericsError> {
    let x = Tensor::<f64>::new(vec![2, 3], vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1])?;
    let err = grad_check(
        |g: &mut Graph<'static, f64>, v| -> Result<_, NumericsError> {
            let t = g.tanh(v)?;
            let s = g.square(t)?;
            let ls = g.log_softmax(s)?;
            g.sum(ls)
        },
        &x,
        1e-6,
    )?;
    println!("sum(log_softmax(tanh(x)^2)): worst relative error {err:.2e}");
    Ok(())
}
