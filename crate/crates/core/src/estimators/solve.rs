//! Finalization `theta = M^{-1} b`, falling back to a truncated SVD
//! pseudo-inverse when `M` is singular or badly conditioned.

use nalgebra::{DMatrix, DVector};

/// Condition numbers above this switch the solve to the pseudo-inverse.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Singular values below `RELATIVE_CUTOFF * sigma_max` are dropped.
pub const RELATIVE_CUTOFF: f64 = 1e-10;

/// Solves `m theta = b`; the flag is set when the pseudo-inverse was used.
pub fn solve(m: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let n = b.len();
    if n == 0 {
        return (DVector::zeros(0), false);
    }
    let svd = m.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let s_min = sigma.min();
    if !(s_max > 0.0) || !s_max.is_finite() {
        return (DVector::zeros(n), true);
    }
    if s_min > 0.0 && s_max / s_min <= CONDITION_LIMIT {
        if let Some(theta) = m.clone().lu().solve(b) {
            if theta.iter().all(|v| v.is_finite()) {
                return (theta, false);
            }
        }
    }
    let theta = svd
        .solve(b, RELATIVE_CUTOFF * s_max)
        .unwrap_or_else(|_| DVector::zeros(n));
    (theta, true)
}
