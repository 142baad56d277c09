//! Central finite-difference gradient verification.
//!
//! Every differentiable op and every model composition is validated by
//! perturbing parameters one element at a time and comparing the
//! two-sided difference quotient against the analytic gradient from
//! [`super::Graph::backward`].

use crate::scalar::{fr, to_f64, Scalar};

/// Worst observed deviation between analytic and numerical gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: usize,
    pub worst_element: usize,
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` evaluates the scalar loss for a given parameter set;
/// `analytic` holds one gradient vector per parameter tensor (zeros
/// where a tensor is unused). Relative error uses
/// max(|num|, |an|, floor) as the denominator so near-zero pairs do
/// not blow up the ratio.
pub fn check_gradients<T: Scalar>(
    params: &mut [Vec<T>],
    analytic: &[Vec<T>],
    mut loss_fn: impl FnMut(&[Vec<T>]) -> T,
    step: f64,
    floor: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst_tensor: 0, worst_element: 0, checked: 0 };
    for ti in 0..params.len() {
        for ei in 0..params[ti].len() {
            let orig = params[ti][ei];
            params[ti][ei] = orig + fr(step);
            let plus = to_f64(loss_fn(params));
            params[ti][ei] = orig - fr(step);
            let minus = to_f64(loss_fn(params));
            params[ti][ei] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let an = to_f64(analytic[ti][ei]);
            let denom = numeric.abs().max(an.abs()).max(floor);
            let rel = (numeric - an).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_tensor = ti;
                report.worst_element = ei;
            }
        }
    }
    report
}
