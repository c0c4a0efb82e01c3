//! Bellman error `E_B(x) = [P - I] h(x) + c(x) - eta` of a fitted relative
//! value function on the lattice queue, with the one-step expectation over
//! geometric arrivals summed directly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::models::{Arrivals, Dynamics, FeatureMap, ModelSpec};

/// The arrival sum stops once the remaining tail mass is below this.
pub const TAIL_MASS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellmanErrorCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub eta_t: f64,
    pub theta_used: Vec<f64>,
}

impl BellmanErrorCurve {
    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

fn geometric(model: &ModelSpec) -> Result<(f64, f64)> {
    match model.dynamics {
        Dynamics::SpeedScaling {
            arrivals: Arrivals::Geometric { delta, p },
            ..
        } => Ok((delta, p)),
        _ => Err(config_err("Bellman error is defined for the geometric-arrival queue")),
    }
}

/// `{0, delta, 2 delta, ...}` up to and including `upper`.
pub fn default_grid(delta: f64, upper: f64) -> Vec<f64> {
    let n = (upper / delta + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * delta).collect()
}

/// Number of arrival terms needed for the tail `(1-p)^n` to drop below `tol`.
pub fn tail_terms(p: f64, tol: f64) -> usize {
    (tol.ln() / (1.0 - p).ln()).ceil() as usize
}

/// `E[h(X(t+1)) | X(t) = x]` using the first `terms` arrival sizes.
pub fn expected_next(model: &ModelSpec, h: &impl Fn(f64) -> f64, x: f64, terms: usize) -> Result<f64> {
    let (delta, p) = geometric(model)?;
    let here = DVector::from_element(1, x);
    let mut total = 0.0;
    let mut mass = p;
    for n in 0..terms {
        let noise = DVector::from_element(1, n as f64 * delta);
        let next = model.advance(&here, &noise)?.0;
        total += mass * h(next[0]);
        mass *= 1.0 - p;
    }
    Ok(total)
}

/// `E_B(x)` for an arbitrary `h` and cost on each grid point.
pub fn bellman_residual(
    model: &ModelSpec,
    h: impl Fn(f64) -> f64,
    cost: impl Fn(f64) -> f64,
    eta: f64,
    grid: &[f64],
    terms: usize,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(config_err("Bellman error needs a non-empty grid"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err("Bellman grid must be strictly increasing"));
    }
    grid.iter()
        .map(|&x| Ok(expected_next(model, &h, x, terms)? - h(x) + cost(x) - eta))
        .collect()
}

/// Bellman error of `h = theta^T psi` with the model's cost.
pub fn bellman_error(
    model: &ModelSpec,
    features: &FeatureMap,
    theta: &[f64],
    eta_t: f64,
    grid: &[f64],
) -> Result<BellmanErrorCurve> {
    let (_, p) = geometric(model)?;
    if theta.len() != features.dim() {
        return Err(config_err("theta length does not match the feature map"));
    }
    let th = DVector::from_column_slice(theta);
    let h = |x: f64| {
        features
            .values(&DVector::from_element(1, x))
            .map(|psi| th.dot(&psi))
            .unwrap_or(f64::NAN)
    };
    let values = bellman_residual(model, h, |x| model.cost(x), eta_t, grid, tail_terms(p, TAIL_MASS))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite("Bellman error"));
    }
    Ok(BellmanErrorCurve {
        grid: grid.to_vec(),
        values,
        eta_t,
        theta_used: theta.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> ModelSpec {
        ModelSpec::speed_scaling_geometric(0.5, 1.0 / 24.0, 0.04, 1.0).unwrap()
    }

    #[test]
    fn zero_theta_leaves_cost_minus_eta() {
        let m = geo();
        let grid = default_grid(1.0 / 24.0, 20.0);
        assert_eq!(grid.len(), 481);
        let curve = bellman_error(&m, &FeatureMap::speed_scaling(), &[0.0, 0.0], 3.0, &grid).unwrap();
        for (x, e) in grid.iter().zip(&curve.values) {
            assert_eq!(*e, m.cost(*x) - 3.0);
        }
    }

    #[test]
    fn exact_poisson_solution_has_zero_error() {
        // h(x) = x solves P h - h = -(c - eta) for c(x) = U(x) - E[N] + eta.
        let m = geo();
        let d = 1.0 / 24.0;
        let grid = default_grid(d, 20.0);
        let mean_arrival = d * 0.96 / 0.04;
        let service = |x: f64| d * (m.policy(x) / d).round();
        let eta = 2.5;
        let vals = bellman_residual(
            &m,
            |x| x,
            |x| service(x) - mean_arrival + eta,
            eta,
            &grid,
            tail_terms(0.04, 1e-15),
        )
        .unwrap();
        assert!(vals.iter().all(|v| v.abs() < 1e-10), "{:?}", &vals[..5]);
    }

    #[test]
    fn truncation_is_converged() {
        let m = geo();
        let grid = default_grid(1.0 / 24.0, 20.0);
        let f = FeatureMap::speed_scaling();
        let h = |x: f64| 0.7 * x.powf(1.5) + 1.3 * x;
        let n = tail_terms(0.04, TAIL_MASS);
        let a = bellman_residual(&m, h, |x| m.cost(x), 0.0, &grid, n).unwrap();
        let b = bellman_residual(&m, h, |x| m.cost(x), 0.0, &grid, 2 * n).unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
        assert_eq!(f.dim(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = FeatureMap::speed_scaling();
        assert!(bellman_error(&geo(), &f, &[0.0, 0.0], 0.0, &[]).is_err());
        let expo = ModelSpec::speed_scaling_exponential(0.5, 1.0).unwrap();
        assert!(bellman_error(&expo, &f, &[0.0, 0.0], 0.0, &[0.0]).is_err());
        assert!(bellman_error(&geo(), &f, &[0.0, 0.0], 0.0, &[1.0, 0.5]).is_err());
    }
}
