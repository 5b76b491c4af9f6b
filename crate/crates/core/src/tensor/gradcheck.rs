//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every adjoint it checks.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is (numerically) zero are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(input, element)` of the largest relative error.
    pub worst: (usize, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Analytic gradients of `f` at `inputs`.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Compares analytic gradients against central differences. With
/// `max_per_input`, only that many evenly strided elements of each input
/// are perturbed.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, max_per_input: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: (0, 0) };
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let n = inputs[i].numel();
        let stride = max_per_input.map_or(1, |m| n.div_ceil(m.max(1)));
        for k in (0..n).step_by(stride) {
            let orig = inputs[i].data()[k];
            probe[i].data_mut()[k] = orig + step;
            let plus = evaluate(&probe, &f)?;
            probe[i].data_mut()[k] = orig - step;
            let minus = evaluate(&probe, &f)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
