//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward passes on fresh tapes, so it is
//! independent of every backward rule it checks.

use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradReport {
    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)` over
    /// all inputs.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub analytic: Vec<Array>,
    pub numeric: Vec<Array>,
}

/// Compare reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`.
pub fn check<F>(inputs: &[Array], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let root = f(&tape, &vars)?;
    if tape.value(root).numel() != 1 {
        return Err(Error::NonScalarRoot(tape.shape(root)));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Array> =
        vars.iter().zip(inputs).map(|(&v, a)| grads.get_or_zeros(v, a.shape())).collect();

    let eval = |perturbed: &[Array]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|a| t.constant(a.clone())).collect();
        let r = f(&t, &vs)?;
        Ok(t.item(r))
    };

    let mut work: Vec<Array> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let mut g = Array::zeros(inputs[which].shape());
        for k in 0..inputs[which].numel() {
            let orig = inputs[which].data()[k];
            work[which].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[which].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[which].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        numeric.push(g);
    }

    let scale = analytic
        .iter()
        .chain(&numeric)
        .map(Array::max_abs)
        .fold(0.0, f64::max)
        .max(1e-300);
    let max_abs_error = analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(GradReport { max_rel_error: max_abs_error / scale, max_abs_error, analytic, numeric })
}
