use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn grad_check<'a, F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'a>, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract("grad_check step must be positive"));
    }
    let analytic = {
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let y = f(&mut g, xv)?;
        let value = g.scalar(y);
        if !value.is_finite() {
            return Err(Error::Numerical {
                index: 0,
                message: format!("function value {value} at the base point"),
            });
        }
        let grads = g.backward(y)?;
        grads
            .get(xv)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.numel()])
    };

    let eval = |probe: Tensor, index: usize| -> Result<f64> {
        let mut g = Graph::inference();
        let xv = g.constant(probe);
        let y = f(&mut g, xv)?;
        let v = g.scalar(y);
        if !v.is_finite() {
            return Err(Error::Numerical {
                index,
                message: format!("function value {v} at probe point"),
            });
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
