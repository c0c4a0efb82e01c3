//! Reference computations that the estimators are checked against.
//!
//! Nothing here reuses estimator code: the closed forms are evaluated
//! directly, and the Monte-Carlo references accumulate their own sums from
//! raw model draws.

mod bellman;
mod exchange;
mod fixed_point;

pub use bellman::{
    bellman_error, bellman_residual, default_grid, expected_next, tail_terms, BellmanErrorCurve,
    TAIL_MASS,
};
pub use exchange::{
    gradient_exchange_check, sensitivity_fd_check, ExchangeCheck, ROUNDOFF_FLOOR,
};
pub use fixed_point::{mc_fixed_point, FixedPoint, FixedPointKind};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Exact discounted value function `h(x) = theta1 + theta2 x^2` of the
/// linear model `X(t+1) = a X(t) + N(t+1)` with cost `x^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLinearSolution {
    pub theta1: f64,
    pub theta2: f64,
    /// Stationary second moment `noise_var / (1 - a^2)`.
    pub pi_second_moment: f64,
    /// Average cost, equal to the stationary second moment.
    pub eta: f64,
}

/// Relative agreement demanded between the closed form and the series.
const SERIES_AGREEMENT: f64 = 1e-10;

pub fn analytic_linear_theta(a: f64, beta: f64, noise_var: f64) -> Result<AnalyticLinearSolution> {
    check_linear(a, beta, noise_var)?;
    let a2 = a * a;
    let pi2 = noise_var / (1.0 - a2);
    let theta2 = 1.0 / (1.0 - beta * a2);
    let theta1 = pi2 * (1.0 / (1.0 - beta) - theta2);
    let sol = AnalyticLinearSolution {
        theta1,
        theta2,
        pi_second_moment: pi2,
        eta: pi2,
    };
    let (s1, s2) = truncated_series_theta(a, beta, noise_var)?;
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    if rel(s1, theta1) > SERIES_AGREEMENT || rel(s2, theta2) > SERIES_AGREEMENT {
        return Err(Error::Oracle(format!(
            "closed form ({theta1}, {theta2}) disagrees with series ({s1}, {s2})"
        )));
    }
    Ok(sol)
}

/// `h(x) = sum_t beta^t E[X(t)^2 | x]` with
/// `E[X(t)^2 | x] = a^{2t} x^2 + noise_var (1 - a^{2t}) / (1 - a^2)`, summed until
/// `beta^t < 1e-12`. Returns `(theta1, theta2)`.
pub fn truncated_series_theta(a: f64, beta: f64, noise_var: f64) -> Result<(f64, f64)> {
    check_linear(a, beta, noise_var)?;
    let a2 = a * a;
    let horizon = (1e-12f64.ln() / beta.ln()).ceil() as u64 + 1;
    let (mut theta1, mut theta2) = (0.0, 0.0);
    let (mut bt, mut a2t) = (1.0, 1.0);
    for _ in 0..horizon {
        theta2 += bt * a2t;
        theta1 += bt * noise_var * (1.0 - a2t) / (1.0 - a2);
        bt *= beta;
        a2t *= a2;
    }
    Ok((theta1, theta2))
}

fn check_linear(a: f64, beta: f64, noise_var: f64) -> Result<()> {
    if !(a.abs() < 1.0) {
        return Err(config_err(format!("analytic solution needs |a| < 1, got {a}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(config_err(format!("analytic solution needs beta in (0, 1), got {beta}")));
    }
    if !(noise_var > 0.0) {
        return Err(config_err("noise variance must be positive"));
    }
    Ok(())
}
