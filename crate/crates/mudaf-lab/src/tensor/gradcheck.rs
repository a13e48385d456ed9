//! Finite-difference gradient oracle, independent of the tape's backward
//! rules: central differences in 64-bit arithmetic with per-element step
//! `h = 1e-5 * max(1, |theta|)`.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{LabError, Result};

/// Relative-error floor: `|a - n| / max(|a|, |n|, REL_FLOOR)`.
const REL_FLOOR: f64 = 1e-8;

/// Builds a scalar loss from leaf parameter handles.
pub trait LossFn: Fn(&mut Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var>> LossFn for F {}

fn eval_scalar(params: &[Tensor], f: &impl LossFn) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_requires_grad(false)))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(LabError::Numeric(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Reverse-mode gradients of `f` for every parameter.
pub fn analytic_gradients(params: &[Tensor], f: &impl LossFn) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(LabError::Usage(format!(
            "check_gradients needs a scalar loss, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect())
}

/// Central-difference gradients of `f` for every parameter.
pub fn numeric_gradients(params: &[Tensor], f: &impl LossFn) -> Result<Vec<Vec<f64>>> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let numel = params[pi].numel();
        let mut g = vec![0.0; numel];
        for e in 0..numel {
            let theta = params[pi].data()[e];
            let h = 1e-5 * theta.abs().max(1.0);
            work[pi].data_mut()[e] = theta + h;
            let plus = eval_scalar(&work, f)?;
            work[pi].data_mut()[e] = theta - h;
            let minus = eval_scalar(&work, f)?;
            work[pi].data_mut()[e] = theta;
            g[e] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Max over parameters of the relative error between analytic
/// (reverse-mode) and numeric (central-difference) gradients.
pub fn check_gradients(params: &[Tensor], f: impl LossFn) -> Result<f64> {
    let analytic = analytic_gradients(params, &f)?;
    let numeric = numeric_gradients(params, &f)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Per-parameter relative error `|a - n| / max(|a|, |n|, 1e-8)` in the L2
/// norm, maxed over parameters.
///
/// The norm aggregates each parameter tensor: central differences carry an
/// irreducible cancellation noise of roughly `eps * |loss| / (2h)` per
/// element, so element-wise ratios on coincidentally tiny gradient entries
/// measure that noise rather than the backward rule under test.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut max_rel: f64 = 0.0;
    for (ag, ng) in analytic.iter().zip(numeric.iter()) {
        let diff = l2_diff(ag, ng);
        let na = l2(ag);
        let nn = l2(ng);
        let rel = diff / na.max(nn).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_checks_at_machine_scale() {
        let x = Tensor::new(vec![3], vec![0.4, -1.2, 2.0]).unwrap();
        let err = check_gradients(&[x], |tape, vars| {
            let s = tape.scale(vars[0], 3.0)?;
            tape.sum_all(s)
        })
        .unwrap();
        assert!(err < 1e-9, "linear map should be near-exact, got {err}");
    }

    #[test]
    fn softmax_cross_entropy_composite_passes() {
        let logits = Tensor::new(
            vec![3, 4],
            vec![0.2, -0.5, 1.0, 0.0, 2.0, 0.3, -1.0, 0.7, 0.0, 0.0, 0.5, -0.2],
        )
        .unwrap();
        let err = check_gradients(&[logits], |tape, vars| {
            tape.cross_entropy_masked(vars[0], &[2, 0, 1], &[true, true, false])
        })
        .unwrap();
        assert!(err <= 1e-4, "rel err {err} above tolerance");
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // Fault injection: scale one analytic entry and confirm the
        // comparison flags it well above the acceptance tolerance.
        let x = Tensor::new(vec![2], vec![0.7, -0.3]).unwrap();
        let f = |tape: &mut Tape, vars: &[Var]| {
            let sq = tape.mul(vars[0], vars[0])?;
            tape.sum_all(sq)
        };
        let mut analytic = analytic_gradients(&[x.clone()], &f).unwrap();
        let numeric = numeric_gradients(&[x], &f).unwrap();
        assert!(max_relative_error(&analytic, &numeric) <= 1e-6);
        analytic[0][0] *= 1.5;
        assert!(max_relative_error(&analytic, &numeric) > 1e-2);
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let x = Tensor::new(vec![1], vec![f64::MAX / 2.0]).unwrap();
        let err = check_gradients(&[x], |tape, vars| {
            let doubled = tape.add(vars[0], vars[0])?;
            let sq = tape.mul(doubled, doubled)?;
            tape.sum_all(sq)
        })
        .unwrap_err();
        assert_eq!(err.class(), "numeric");
    }
}
