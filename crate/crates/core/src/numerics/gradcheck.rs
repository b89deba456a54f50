use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference step used by default.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all elements of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub elements_checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(v)
}

/// Analytic gradients of the scalar `f` w.r.t. each input.
pub fn analytic_gradients<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    vars.iter().map(|&v| grads.wrt(v).ok_or_else(|| Error::Contract("missing gradient".into()))).collect()
}

/// Compares supplied gradients against central differences of `f`.
pub fn compare_gradients<F>(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
    f: &F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, elements_checked: 0 };
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of input {i} element {j}")));
            }
            let e = rel_error(a, numeric);
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = e.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// Finite-difference gradient check of a scalar function built on a fresh
/// 64-bit tape from gradient-tracked copies of `inputs`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    compare_gradients(inputs, &analytic, eps, &f)
}
