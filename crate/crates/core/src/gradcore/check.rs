use crate::error::{Error, Result};

use super::{Graph, Real, Tensor, Var};

/// Central finite-difference check of a recorded scalar function of one input.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once; every coordinate of every
/// input is perturbed.
pub fn grad_check_many<T, F>(f: F, inputs: &[Tensor<T>], h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |ins: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective"));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).all_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..inputs[ti].len() {
            let x0 = inputs[ti].data()[j];
            probe[ti].data_mut()[j] = x0 + T::from_f64(h);
            let up = eval(&probe)?;
            probe[ti].data_mut()[j] = x0 - T::from_f64(h);
            let down = eval(&probe)?;
            probe[ti].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[j];
            if !a.is_finite() {
                return Err(Error::NonFinite("grad_check gradient"));
            }
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
