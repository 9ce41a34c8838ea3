//! Central finite-difference gradient checker.
//!
//! The function under test must be deterministic (disable dropout) and
//! should be evaluated away from kinks: ReLU at exactly 0 has a one-sided
//! derivative that the central difference cannot reproduce, so callers
//! keep ReLU inputs off zero.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default step for [`grad_check`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Analytic versus numeric gradients for one parameter list.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_relative_error: f64,
}

/// Maximum over all parameter entries of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, params, step)?.max_relative_error)
}

pub fn grad_check_report<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut working: Vec<Tensor> = params
        .iter()
        .map(|p| p.clone().with_requires_grad())
        .collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = working.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = working
        .iter()
        .zip(&vars)
        .map(|(p, &v)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::Contract("grad_check function must return a scalar".into()))
    };

    let mut numeric = Vec::with_capacity(working.len());
    for pi in 0..working.len() {
        let mut column = Vec::with_capacity(working[pi].len());
        for j in 0..working[pi].len() {
            let original = working[pi].data()[j];
            working[pi].data_mut()[j] = original + step;
            let plus = eval(&working)?;
            working[pi].data_mut()[j] = original - step;
            let minus = eval(&working)?;
            working[pi].data_mut()[j] = original;
            column.push((plus - minus) / (2.0 * step));
        }
        numeric.push(column);
    }

    let max_relative_error = analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max);

    Ok(GradCheckReport {
        analytic,
        numeric,
        max_relative_error,
    })
}
