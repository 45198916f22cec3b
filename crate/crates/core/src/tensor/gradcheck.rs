//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and central differences with step `h`.
///
/// The per-coordinate error is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let errs = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(errs[0])
}

/// [`grad_check`] over several inputs at once; returns one max error per
/// input tensor.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let y = f(&tape, &vars)?;
        check_finite(y.item(), "loss at base point")?;
        let grads = tape.backward(y)?;
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?.item();
        check_finite(y, "loss at perturbed point")?;
        Ok(y)
    };

    let mut inputs: Vec<Tensor> = xs.to_vec();
    let mut errors = Vec::with_capacity(xs.len());
    for (which, grad) in analytic.iter().enumerate() {
        check_finite_all(grad, "analytic gradient")?;
        let mut worst: f64 = 0.0;
        for i in 0..grad.numel() {
            let orig = inputs[which].data()[i];
            inputs[which].data_mut()[i] = orig + h;
            let plus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig - h;
            let minus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("grad_check: {what}"),
        })
    }
}

fn check_finite_all(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("grad_check: {what}"),
        })
    }
}
