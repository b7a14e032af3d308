//! Central-difference verification of hand-derived gradients.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Magnitude below which relative error is measured against this floor instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
}

/// Compares the analytic gradient returned by `objective` at `params` with
/// `(f(θ+εe) − f(θ−εe)) / 2ε` for every coordinate.
///
/// `objective` returns the value and its analytic gradient. Relative error per
/// coordinate is `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn grad_check<F>(objective: F, params: &[f64], eps: f64) -> Result<GradReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if eps.is_nan() || eps <= 0.0 {
        return usage(format!("finite-difference step must be positive, got {eps}"));
    }
    let (f0, analytic) = objective(params);
    if !f0.is_finite() {
        return Err(Error::Numeric { iteration: 0, message: "objective is not finite".into() });
    }
    if analytic.len() != params.len() {
        return usage(format!(
            "analytic gradient has {} coordinates, expected {}",
            analytic.len(),
            params.len()
        ));
    }
    let mut probe = params.to_vec();
    let mut report = GradReport { max_abs_err: 0.0, max_rel_err: 0.0, worst_index: 0 };
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let fp = objective(&probe).0;
        probe[i] = params[i] - eps;
        let fm = objective(&probe).0;
        probe[i] = params[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric {
                iteration: i,
                message: format!("objective is not finite when perturbing coordinate {i}"),
            });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
