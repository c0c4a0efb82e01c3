//! State-space models `X(t+1) = a(X(t), N(t+1))` with costs, features and
//! the per-step sensitivity factor.
//!
//! Two families ship: the scalar linear-Gaussian chain and the speed-scaling
//! queue `X(t+1) = X(t) - f(X(t)) + N(t+1)` with exponential or lattice
//! (geometric) arrivals. On the lattice model every derivative is replaced by
//! a forward difference with step `delta`.

mod features;

pub use features::FeatureMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrivals {
    Exponential { mean: f64 },
    /// `P(N = n delta) = (1 - p)^n p`.
    Geometric { delta: f64, p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `X(t+1) = a X(t) + N(t+1)`, `N ~ N(0, noise_var)`, cost `x^2`.
    Linear { a: f64, noise_var: f64 },
    /// Service `f(x) = min{x, 1 + epsilon sqrt(x)}`, cost `x + f(x)^2 / 2`.
    SpeedScaling { epsilon: f64, arrivals: Arrivals },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dynamics: Dynamics,
    /// Discount factor; `1.0` selects the average-cost setting.
    pub beta: f64,
    /// Multiplier applied to the cost and its gradient.
    pub cost_scale: f64,
}

/// Which scalar map a finite difference is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Policy,
    Cost,
    /// The dynamics map `x -> a(x, 0)`.
    Dynamics,
}

/// One step of the chain together with everything the estimators consume.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub noise: DVector<f64>,
    pub x_next: DVector<f64>,
    /// Jacobian of `x -> x_next` at fixed noise (`A(t+1)` when `x = X(t)`).
    pub sens: DMatrix<f64>,
    pub cost: f64,
    pub grad_cost: DVector<f64>,
    pub psi: DVector<f64>,
    pub grad_psi: DMatrix<f64>,
    pub psi_next: DVector<f64>,
    pub grad_psi_next: DMatrix<f64>,
    /// The queue empties during this step, so `x_next` is a fresh arrival.
    pub regen: bool,
}

impl ModelSpec {
    pub fn linear(a: f64, noise_var: f64, beta: f64) -> Result<Self> {
        let m = Self {
            dynamics: Dynamics::Linear { a, noise_var },
            beta,
            cost_scale: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn speed_scaling_exponential(epsilon: f64, beta: f64) -> Result<Self> {
        let m = Self {
            dynamics: Dynamics::SpeedScaling {
                epsilon,
                arrivals: Arrivals::Exponential { mean: 1.0 },
            },
            beta,
            cost_scale: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn speed_scaling_geometric(epsilon: f64, delta: f64, p: f64, beta: f64) -> Result<Self> {
        let m = Self {
            dynamics: Dynamics::SpeedScaling {
                epsilon,
                arrivals: Arrivals::Geometric { delta, p },
            },
            beta,
            cost_scale: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_cost_scale(mut self, s: f64) -> Self {
        self.cost_scale = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(config_err(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !self.cost_scale.is_finite() {
            return Err(config_err("cost scale must be finite"));
        }
        match self.dynamics {
            Dynamics::Linear { a, noise_var } => {
                if !(a.abs() < 1.0) {
                    return Err(config_err(format!("linear model requires |a| < 1, got {a}")));
                }
                if !(noise_var > 0.0 && noise_var.is_finite()) {
                    return Err(config_err("noise variance must be positive"));
                }
            }
            Dynamics::SpeedScaling { epsilon, arrivals } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(config_err("speed scaling requires epsilon > 0"));
                }
                match arrivals {
                    Arrivals::Exponential { mean } => {
                        if !(mean > 0.0 && mean.is_finite()) {
                            return Err(config_err("exponential arrival mean must be positive"));
                        }
                    }
                    Arrivals::Geometric { delta, p } => {
                        if !(delta > 0.0 && delta.is_finite()) {
                            return Err(config_err("lattice spacing delta must be positive"));
                        }
                        if !(p > 0.0 && p < 1.0) {
                            return Err(config_err("arrival probability p must lie in (0, 1)"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        1
    }

    pub fn noise_dim(&self) -> usize {
        1
    }

    pub fn is_queue(&self) -> bool {
        matches!(self.dynamics, Dynamics::SpeedScaling { .. })
    }

    /// Smooth models have a genuine sensitivity process (not difference quotients).
    pub fn is_smooth(&self) -> bool {
        !self.lattice_step().is_some()
    }

    /// Geometric arrivals make the empty queue a recurrent state.
    pub fn has_regeneration(&self) -> bool {
        self.lattice_step().is_some()
    }

    pub fn lattice_step(&self) -> Option<f64> {
        match self.dynamics {
            Dynamics::SpeedScaling {
                arrivals: Arrivals::Geometric { delta, .. },
                ..
            } => Some(delta),
            _ => None,
        }
    }

    /// The state at which the service policy leaves the identity branch,
    /// `x* = eps_bar^2` with `eps_bar = (eps + sqrt(eps^2 + 4)) / 2`.
    pub fn switch_point(&self) -> Option<f64> {
        match self.dynamics {
            Dynamics::SpeedScaling { epsilon, .. } => {
                let eps_bar = 0.5 * (epsilon + (epsilon * epsilon + 4.0).sqrt());
                Some(eps_bar * eps_bar)
            }
            Dynamics::Linear { .. } => None,
        }
    }

    /// Service policy `f(x) = min{x, 1 + eps sqrt(x)}`; zero for the linear model.
    pub fn policy(&self, x: f64) -> f64 {
        match self.dynamics {
            Dynamics::SpeedScaling { epsilon, .. } => x.min(1.0 + epsilon * x.sqrt()),
            Dynamics::Linear { .. } => 0.0,
        }
    }

    /// Right derivative of the policy.
    fn policy_derivative(&self, x: f64) -> f64 {
        match self.dynamics {
            Dynamics::SpeedScaling { epsilon, .. } => {
                if x < self.switch_point().unwrap_or(0.0) {
                    1.0
                } else {
                    0.5 * epsilon / x.sqrt()
                }
            }
            Dynamics::Linear { .. } => 0.0,
        }
    }

    fn raw_cost(&self, x: f64) -> f64 {
        match self.dynamics {
            Dynamics::Linear { .. } => x * x,
            Dynamics::SpeedScaling { .. } => {
                let f = self.policy(x);
                x + 0.5 * f * f
            }
        }
    }

    /// `c(x)`, including the cost scale.
    pub fn cost(&self, x: f64) -> f64 {
        self.cost_scale * self.raw_cost(x)
    }

    /// `grad c(x)`; a forward difference on the lattice model.
    pub fn grad_cost(&self, x: f64) -> f64 {
        let g = match (self.dynamics, self.lattice_step()) {
            (_, Some(delta)) => forward_difference(|y| self.raw_cost(y), x, delta),
            (Dynamics::Linear { .. }, None) => 2.0 * x,
            (Dynamics::SpeedScaling { .. }, None) => {
                1.0 + self.policy(x) * self.policy_derivative(x)
            }
        };
        self.cost_scale * g
    }

    /// Sensitivity factor `d a(x, n) / d x`, which is noise-free for these models.
    pub fn sensitivity(&self, x: f64) -> f64 {
        match (self.dynamics, self.lattice_step()) {
            (Dynamics::Linear { a, .. }, _) => a,
            (_, Some(delta)) => 1.0 - forward_difference(|y| self.policy(y), x, delta),
            (Dynamics::SpeedScaling { .. }, None) => {
                if x < self.switch_point().unwrap_or(0.0) {
                    0.0
                } else {
                    1.0 - self.policy_derivative(x)
                }
            }
        }
    }

    /// Forward difference quotient of `quantity` at `x`.
    ///
    /// On the lattice model the step must equal the lattice spacing.
    pub fn finite_difference(&self, quantity: Quantity, x: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(config_err(format!("difference step must be positive, got {h}")));
        }
        if let Some(delta) = self.lattice_step() {
            if h != delta {
                return Err(config_err(format!(
                    "lattice model differences use h = delta = {delta}, got {h}"
                )));
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("difference point"));
        }
        Ok(match quantity {
            Quantity::Policy => forward_difference(|y| self.policy(y), x, h),
            Quantity::Cost => forward_difference(|y| self.cost(y), x, h),
            Quantity::Dynamics => forward_difference(|y| self.drift(y), x, h),
        })
    }

    // a(x, 0)
    fn drift(&self, x: f64) -> f64 {
        match self.dynamics {
            Dynamics::Linear { a, .. } => a * x,
            Dynamics::SpeedScaling { .. } => x - self.policy(x),
        }
    }

    pub fn draw_noise(&self, rng: &mut NoiseStream) -> DVector<f64> {
        let n = match self.dynamics {
            Dynamics::Linear { noise_var, .. } => noise_var.sqrt() * rng.standard_normal(),
            Dynamics::SpeedScaling { arrivals, .. } => match arrivals {
                Arrivals::Exponential { mean } => rng.exponential(mean),
                Arrivals::Geometric { delta, p } => rng.geometric(p) as f64 * delta,
            },
        };
        DVector::from_element(1, n)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != 1 {
            return Err(Error::Dimension {
                what: "state",
                expected: 1,
                got: x.len(),
            });
        }
        let s = x[0];
        if !s.is_finite() {
            return Err(Error::NonFinite("state"));
        }
        if self.is_queue() && s < 0.0 {
            return Err(Error::State(s, "queue length must be non-negative"));
        }
        if let Some(delta) = self.lattice_step() {
            let k = (s / delta).round();
            if (s / delta - k).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::State(s, "state is not on the arrival lattice"));
            }
        }
        Ok(s)
    }

    /// Applies the dynamics: returns `x_next`, the step Jacobian, and whether
    /// the queue emptied during service.
    pub fn advance(
        &self,
        x: &DVector<f64>,
        noise: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
        let s = self.check_state(x)?;
        if noise.len() != 1 {
            return Err(Error::Dimension {
                what: "noise",
                expected: 1,
                got: noise.len(),
            });
        }
        let n = noise[0];
        if !n.is_finite() {
            return Err(Error::NonFinite("noise"));
        }
        let (next, regen) = match (self.dynamics, self.lattice_step()) {
            (Dynamics::Linear { a, .. }, _) => (a * s + n, false),
            (_, Some(delta)) => {
                // Integer lattice arithmetic keeps states exactly on {0, delta, ...}.
                let k = (s / delta).round() as i64;
                let served = ((self.policy(s) / delta).round() as i64).min(k);
                let arrived = (n / delta).round() as i64;
                let left = k - served;
                ((left + arrived) as f64 * delta, left == 0)
            }
            (Dynamics::SpeedScaling { .. }, None) => {
                ((s - self.policy(s)).max(0.0) + n, false)
            }
        };
        let sens = DMatrix::from_element(1, 1, self.sensitivity(s));
        Ok((DVector::from_element(1, next), sens, regen))
    }

    /// Feature values and gradients, with difference quotients on the lattice model.
    pub fn features_at(
        &self,
        features: &FeatureMap,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (psi, grad) = features.eval(x)?;
        match self.lattice_step() {
            None => Ok((psi, grad)),
            Some(delta) => {
                let shifted = features.values(&x.add_scalar(delta))?;
                let fd = (shifted - &psi) / delta;
                Ok((psi, DMatrix::from_row_slice(1, fd.len(), fd.as_slice())))
            }
        }
    }

    pub fn step(
        &self,
        features: &FeatureMap,
        x: &DVector<f64>,
        noise: &DVector<f64>,
    ) -> Result<Transition> {
        let (x_next, sens, regen) = self.advance(x, noise)?;
        let s = x[0];
        let (psi, grad_psi) = self.features_at(features, x)?;
        let (psi_next, grad_psi_next) = self.features_at(features, &x_next)?;
        let cost = self.cost(s);
        let grad_cost = DVector::from_element(1, self.grad_cost(s));
        if !cost.is_finite() || !grad_cost[0].is_finite() || !x_next[0].is_finite() {
            return Err(Error::NonFinite("transition"));
        }
        Ok(Transition {
            x: x.clone(),
            noise: noise.clone(),
            x_next,
            sens,
            cost,
            grad_cost,
            psi,
            grad_psi,
            psi_next,
            grad_psi_next,
            regen,
        })
    }

    /// Default initial state (the empty queue, or the origin).
    pub fn initial_state(&self) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }
}

/// `[g(x + h) - g(x)] / h`.
pub fn forward_difference(g: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (g(x + h) - g(x)) / h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn expo() -> ModelSpec {
        ModelSpec::speed_scaling_exponential(0.5, 1.0).unwrap()
    }

    fn geo() -> ModelSpec {
        ModelSpec::speed_scaling_geometric(0.5, 1.0 / 24.0, 0.04, 1.0).unwrap()
    }

    #[test]
    fn linear_step_substitution() {
        let m = ModelSpec::linear(0.7, 1.0, 0.9).unwrap();
        let tr = m.step(&FeatureMap::quadratic(), &v(1.0), &v(0.5)).unwrap();
        assert!((tr.x_next[0] - 1.2).abs() < 1e-15);
        assert_eq!(tr.sens[(0, 0)], 0.7);
        assert_eq!(tr.cost, 1.0);
        assert_eq!(tr.grad_cost[0], 2.0);
        assert!(!tr.regen);
    }

    #[test]
    fn speed_scaling_boundary_branch() {
        let m = expo();
        let f = FeatureMap::speed_scaling();
        let tr = m.step(&f, &v(0.5), &v(0.3)).unwrap();
        assert_eq!(m.policy(0.5), 0.5);
        assert_eq!(tr.x_next[0], 0.3);
        assert_eq!(tr.sens[(0, 0)], 0.0);
        assert_eq!(tr.grad_cost[0], 1.5);
    }

    #[test]
    fn speed_scaling_interior_branch() {
        let m = expo();
        let tr = m.step(&FeatureMap::speed_scaling(), &v(4.0), &v(1.0)).unwrap();
        assert_eq!(m.policy(4.0), 2.0);
        assert_eq!(tr.sens[(0, 0)], 0.875);
        assert_eq!(tr.grad_cost[0], 1.25);
        assert_eq!(tr.x_next[0], 3.0);
    }

    #[test]
    fn switch_point_is_fixed_point_of_policy() {
        let m = expo();
        let xs = m.switch_point().unwrap();
        assert!((xs - 1.640_388_203_202_207_7).abs() < 1e-12);
        assert!((xs - (1.0 + 0.5 * xs.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_branch_consistency() {
        let m = expo();
        let xs = m.switch_point().unwrap();
        for i in 0..400 {
            let x = i as f64 * 0.025;
            let a = m.sensitivity(x);
            if x < xs {
                assert_eq!(a, 0.0);
                assert_eq!(m.policy(x), x);
            } else {
                assert!(a > 0.0 && a < 1.0);
                assert!(a >= 1.0 - 0.5 * 0.5 / x.sqrt() - 1e-15);
            }
        }
    }

    #[test]
    fn differences_on_lattice() {
        let m = geo();
        let d = 1.0 / 24.0;
        assert_eq!(m.finite_difference(Quantity::Policy, 0.0, d).unwrap(), 1.0);
        let q = m.finite_difference(Quantity::Policy, 4.0, d).unwrap();
        assert!((q - 0.124_676_163_629_644).abs() < 1e-9, "{q}");
        assert!((m.sensitivity(4.0) - (1.0 - q)).abs() < 1e-15);
        assert!(m.finite_difference(Quantity::Policy, 4.0, 0.01).is_err());
    }

    #[test]
    fn difference_quotient_converges_to_derivative() {
        let m = expo();
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let h = 10f64.powi(-k);
            let q = m.finite_difference(Quantity::Policy, 4.0, h).unwrap();
            let err = (q - 0.125).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-6);
        let gc = m.finite_difference(Quantity::Cost, 4.0, 1e-7).unwrap();
        assert!((gc - 1.25).abs() < 1e-5);
        let ga = m.finite_difference(Quantity::Dynamics, 4.0, 1e-7).unwrap();
        assert!((ga - 0.875).abs() < 1e-5);
    }

    #[test]
    fn constant_map_has_zero_difference() {
        assert_eq!(forward_difference(|_| 3.5, 2.0, 0.1), 0.0);
        assert!(expo().finite_difference(Quantity::Policy, 1.0, 0.0).is_err());
    }

    #[test]
    fn geometric_regeneration_and_lattice() {
        let m = geo();
        let d = 1.0 / 24.0;
        let f = FeatureMap::speed_scaling();
        let tr = m.step(&f, &v(0.0), &v(5.0 * d)).unwrap();
        assert!(tr.regen);
        assert!((tr.x_next[0] - 5.0 * d).abs() < 1e-15);
        let tr = m.step(&f, &v(96.0 * d), &v(0.0)).unwrap();
        assert!(!tr.regen);
        let k = tr.x_next[0] / d;
        assert!((k - k.round()).abs() < 1e-12);
        assert!(m.step(&f, &v(0.3), &v(0.0)).is_err());
    }

    #[test]
    fn rejects_invalid_states_and_specs() {
        let f = FeatureMap::speed_scaling();
        assert!(expo().step(&f, &v(-1.0), &v(0.0)).is_err());
        assert!(expo().step(&f, &v(f64::NAN), &v(0.0)).is_err());
        assert!(ModelSpec::linear(1.0, 1.0, 0.9).is_err());
        assert!(ModelSpec::linear(0.7, 1.0, 0.0).is_err());
        assert!(ModelSpec::speed_scaling_exponential(0.0, 1.0).is_err());
        assert!(ModelSpec::speed_scaling_geometric(0.5, 0.0, 0.04, 1.0).is_err());
        assert!(ModelSpec::speed_scaling_geometric(0.5, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn geometric_states_stay_on_lattice() {
        let m = geo();
        let d = 1.0 / 24.0;
        let f = FeatureMap::speed_scaling();
        let mut rng = NoiseStream::new(3, 0);
        let mut x = m.initial_state();
        for _ in 0..50_000 {
            let n = m.draw_noise(&mut rng);
            let tr = m.step(&f, &x, &n).unwrap();
            let k = tr.x_next[0] / d;
            assert!((k - k.round()).abs() < 1e-9);
            x = tr.x_next;
        }
    }
}
