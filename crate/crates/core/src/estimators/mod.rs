//! Recursive LSTD-type estimators.
//!
//! Every estimator consumes a stream of [`Transition`] records with gain
//! `alpha_t = 1/t` and is finalized by solving `M(T) theta = b(T)`. The
//! differential (gradient) variants work on the non-constant part of the
//! basis; the constant is recovered afterwards from running means of the cost
//! and of the fitted value function.

mod solve;

pub use solve::{solve, CONDITION_LIMIT, RELATIVE_CUTOFF};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::models::Transition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Standard LSTD (equivalent to LSTD(1)).
    Lstd,
    /// Differential LSTD.
    GradLstd,
    /// LSTD(lambda).
    LstdLambda,
    /// Differential LSTD(lambda).
    GradLstdLambda,
    /// LSTD(lambda) for average cost with centered features.
    LstdLambdaAvg,
    /// Regenerative LSTD for average cost.
    RegenLstd,
    /// Regenerative LSTD(lambda) for average cost.
    RegenLstdLambda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Lstd,
        Algorithm::GradLstd,
        Algorithm::LstdLambda,
        Algorithm::GradLstdLambda,
        Algorithm::LstdLambdaAvg,
        Algorithm::RegenLstd,
        Algorithm::RegenLstdLambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lstd => "lstd",
            Algorithm::GradLstd => "grad_lstd",
            Algorithm::LstdLambda => "lstd_lambda",
            Algorithm::GradLstdLambda => "grad_lstd_lambda",
            Algorithm::LstdLambdaAvg => "lstd_lambda_avg",
            Algorithm::RegenLstd => "regen_lstd",
            Algorithm::RegenLstdLambda => "regen_lstd_lambda",
        }
    }

    pub fn is_gradient(self) -> bool {
        matches!(self, Algorithm::GradLstd | Algorithm::GradLstdLambda)
    }

    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            Algorithm::LstdLambda
                | Algorithm::GradLstdLambda
                | Algorithm::LstdLambdaAvg
                | Algorithm::RegenLstdLambda
        )
    }

    /// Algorithms that only make sense with `beta = 1`.
    pub fn average_cost_only(self) -> bool {
        matches!(
            self,
            Algorithm::LstdLambdaAvg | Algorithm::RegenLstd | Algorithm::RegenLstdLambda
        )
    }

    /// Algorithms whose un-normalized traces need `beta < 1`.
    pub fn discounted_only(self) -> bool {
        matches!(self, Algorithm::Lstd | Algorithm::LstdLambda)
    }

    pub fn requires_regeneration(self) -> bool {
        matches!(self, Algorithm::RegenLstd | Algorithm::RegenLstdLambda)
    }

    /// Noise stream used when trajectories are not shared across algorithms.
    pub fn stream_id(self) -> u64 {
        Self::ALL.iter().position(|a| *a == self).unwrap() as u64 + 1
    }

    fn matrix_trace(self) -> bool {
        self.is_gradient()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == key)
            .ok_or_else(|| config_err(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub lambda: f64,
    /// `M(0) = init_scale * I`.
    pub init_scale: f64,
    /// Refresh interval of the running `theta(t)` used for constant recovery.
    pub cadence: u64,
    pub constant_mask: Vec<bool>,
}

impl EstimatorConfig {
    pub fn new(algorithm: Algorithm, beta: f64, lambda: f64, constant_mask: Vec<bool>) -> Self {
        Self {
            algorithm,
            beta,
            lambda,
            init_scale: 1e-3,
            cadence: 100,
            constant_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alg = self.algorithm;
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(config_err(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if alg.average_cost_only() && self.beta != 1.0 {
            return Err(config_err(format!("{alg} is an average-cost algorithm and needs beta = 1")));
        }
        if alg.discounted_only() && self.beta >= 1.0 {
            return Err(config_err(format!("{alg} needs a discount beta < 1")));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(config_err("M(0) scale must be positive"));
        }
        if self.cadence == 0 {
            return Err(config_err("finalization cadence must be at least 1"));
        }
        Ok(())
    }
}

/// Finalized estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    /// Coefficients on the full basis; constant coordinates skipped by the
    /// differential estimators are reported as zero and carried by `kappa`.
    pub theta: Vec<f64>,
    /// Recovered additive constant (discounted differential estimators only).
    pub kappa: f64,
    /// Running average of the cost.
    pub eta: f64,
    pub rank_deficient: bool,
}

/// Running means that recover the constant offset of a differential fit:
/// `kappa = -mean(theta^T psi) + eta / (1 - beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantRecovery {
    beta: f64,
    t: u64,
    eta: f64,
    h_bar: f64,
}

impl ConstantRecovery {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(config_err("constant recovery needs a discount beta in (0, 1)"));
        }
        Ok(Self {
            beta,
            t: 0,
            eta: 0.0,
            h_bar: 0.0,
        })
    }

    pub fn step(&mut self, cost: f64, psi: &DVector<f64>, theta: &DVector<f64>) {
        self.t += 1;
        let alpha = 1.0 / self.t as f64;
        let h = theta.dot(psi);
        self.h_bar += alpha * (h - self.h_bar);
        self.eta += alpha * (cost - self.eta);
    }

    pub fn kappa(&self) -> f64 {
        -self.h_bar + self.eta / (1.0 - self.beta)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn h_bar(&self) -> f64 {
        self.h_bar
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Eligibility {
    Vector(DVector<f64>),
    /// `l x d` eligibility matrix of the differential algorithms.
    Matrix(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct EstimatorState {
    config: EstimatorConfig,
    d: usize,
    active: Vec<usize>,
    t: u64,
    b: DVector<f64>,
    m: DMatrix<f64>,
    trace: Eligibility,
    eta: f64,
    eta_psi: DVector<f64>,
    theta_current: DVector<f64>,
    recovery: Option<ConstantRecovery>,
    // A(t) for the next update: the Jacobian of the previous step.
    prev_sens: Option<DMatrix<f64>>,
    prev_regen: bool,
}

impl EstimatorState {
    pub fn new(config: EstimatorConfig, state_dim: usize) -> Result<Self> {
        config.validate()?;
        let d = config.constant_mask.len();
        if d == 0 {
            return Err(config_err("estimator needs at least one basis function"));
        }
        let active: Vec<usize> = if config.algorithm.is_gradient() {
            (0..d).filter(|&j| !config.constant_mask[j]).collect()
        } else {
            (0..d).collect()
        };
        if active.is_empty() {
            return Err(config_err("differential estimators need a non-constant basis function"));
        }
        let k = active.len();
        let trace = if config.algorithm.matrix_trace() {
            Eligibility::Matrix(DMatrix::zeros(state_dim, k))
        } else {
            Eligibility::Vector(DVector::zeros(k))
        };
        let recovery = if config.algorithm.is_gradient() && config.beta < 1.0 {
            Some(ConstantRecovery::new(config.beta)?)
        } else {
            None
        };
        Ok(Self {
            d,
            t: 0,
            b: DVector::zeros(k),
            m: DMatrix::identity(k, k) * config.init_scale,
            trace,
            eta: 0.0,
            eta_psi: DVector::zeros(d),
            theta_current: DVector::zeros(k),
            recovery,
            prev_sens: None,
            prev_regen: false,
            active,
            config,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn eligibility(&self) -> &Eligibility {
        &self.trace
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn eta_psi(&self) -> &DVector<f64> {
        &self.eta_psi
    }

    /// Indices of the basis functions this estimator fits.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn recovery(&self) -> Option<&ConstantRecovery> {
        self.recovery.as_ref()
    }

    /// Dispatches to the update of the configured algorithm.
    pub fn update(&mut self, tr: &Transition) -> Result<()> {
        match self.config.algorithm {
            Algorithm::Lstd => self.lstd_step(tr),
            Algorithm::GradLstd => self.grad_lstd_step(tr),
            Algorithm::LstdLambda => self.lstd_lambda_step(tr),
            Algorithm::GradLstdLambda => self.grad_lstd_lambda_step(tr),
            Algorithm::LstdLambdaAvg => self.lstd_lambda_avg_step(tr),
            Algorithm::RegenLstd | Algorithm::RegenLstdLambda => self.regen_lstd_step(tr),
        }
    }

    fn expect(&self, algs: &[Algorithm]) -> Result<()> {
        if algs.contains(&self.config.algorithm) {
            Ok(())
        } else {
            Err(config_err(format!(
                "estimator configured for {} cannot take this update",
                self.config.algorithm
            )))
        }
    }

    fn check_dims(&self, tr: &Transition) -> Result<()> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension { what, expected, got })
            }
        };
        let l = tr.x.len();
        dim("psi", self.d, tr.psi.len())?;
        dim("psi_next", self.d, tr.psi_next.len())?;
        dim("grad_psi columns", self.d, tr.grad_psi.ncols())?;
        dim("grad_psi rows", l, tr.grad_psi.nrows())?;
        dim("grad_psi_next columns", self.d, tr.grad_psi_next.ncols())?;
        dim("grad_cost", l, tr.grad_cost.len())?;
        dim("sensitivity rows", l, tr.sens.nrows())?;
        dim("sensitivity columns", l, tr.sens.ncols())?;
        if let Eligibility::Matrix(z) = &self.trace {
            dim("eligibility rows", z.nrows(), l)?;
        }
        Ok(())
    }

    // Advances the clock and the average-cost register; returns alpha_t.
    fn begin(&mut self, tr: &Transition) -> Result<f64> {
        self.check_dims(tr)?;
        self.t += 1;
        let alpha = 1.0 / self.t as f64;
        self.eta += (tr.cost - self.eta) * alpha;
        Ok(alpha)
    }

    fn end(&mut self, tr: &Transition) {
        self.prev_sens = Some(tr.sens.clone());
        self.prev_regen = tr.regen;
    }

    fn active_rows(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.active.len() == self.d {
            v.clone()
        } else {
            v.select_rows(&self.active)
        }
    }

    fn active_cols(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        if self.active.len() == self.d {
            g.clone()
        } else {
            g.select_columns(&self.active)
        }
    }

    fn vector_trace(&mut self) -> &mut DVector<f64> {
        match &mut self.trace {
            Eligibility::Vector(v) => v,
            Eligibility::Matrix(_) => unreachable!("vector trace requested for a matrix estimator"),
        }
    }

    fn matrix_trace(&mut self) -> &mut DMatrix<f64> {
        match &mut self.trace {
            Eligibility::Matrix(m) => m,
            Eligibility::Vector(_) => unreachable!("matrix trace requested for a vector estimator"),
        }
    }

    // z <- scale * z + input
    fn decay_vector(&mut self, scale: f64, input: &DVector<f64>) -> DVector<f64> {
        let z = self.vector_trace();
        *z = &*z * scale + input;
        z.clone()
    }

    // z <- scale * A(t) z + input
    fn decay_matrix(&mut self, scale: f64, input: &DMatrix<f64>) -> DMatrix<f64> {
        let l = input.nrows();
        let a = self
            .prev_sens
            .clone()
            .unwrap_or_else(|| DMatrix::identity(l, l));
        let z = self.matrix_trace();
        *z = (&a * &*z) * scale + input;
        z.clone()
    }

    /// Standard LSTD: `phi = beta phi + psi`, `b` and `M` running means of
    /// `phi c` and `psi psi^T`.
    pub fn lstd_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::Lstd])?;
        let alpha = self.begin(tr)?;
        let phi = self.decay_vector(self.config.beta, &tr.psi);
        self.b += (&phi * tr.cost - &self.b) * alpha;
        self.m += (&tr.psi * tr.psi.transpose() - &self.m) * alpha;
        self.end(tr);
        Ok(())
    }

    /// Differential LSTD: `phi = beta A(t) phi + grad psi`, `b` the running
    /// mean of `phi^T grad c`, `M` of `grad psi^T grad psi`.
    pub fn grad_lstd_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::GradLstd])?;
        let alpha = self.begin(tr)?;
        let g = self.active_cols(&tr.grad_psi);
        let phi = self.decay_matrix(self.config.beta, &g);
        self.b += (phi.transpose() * &tr.grad_cost - &self.b) * alpha;
        self.m += (g.transpose() * &g - &self.m) * alpha;
        self.after_gradient_update(tr)?;
        self.end(tr);
        Ok(())
    }

    /// LSTD(lambda); `M` uses the temporal difference `psi - beta psi_next`.
    pub fn lstd_lambda_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::LstdLambda])?;
        let alpha = self.begin(tr)?;
        let zeta = self.decay_vector(self.config.beta * self.config.lambda, &tr.psi);
        let diff = &tr.psi - &tr.psi_next * self.config.beta;
        self.b = &self.b * (1.0 - alpha) + &zeta * (alpha * tr.cost);
        self.m = &self.m * (1.0 - alpha) + (&zeta * diff.transpose()) * alpha;
        self.end(tr);
        Ok(())
    }

    /// Differential LSTD(lambda); `M` uses
    /// `[grad psi(X(t)) - beta A^T(t+1) grad psi(X(t+1))]^T zeta`.
    pub fn grad_lstd_lambda_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::GradLstdLambda])?;
        let alpha = self.begin(tr)?;
        let g = self.active_cols(&tr.grad_psi);
        let g_next = self.active_cols(&tr.grad_psi_next);
        let zeta = self.decay_matrix(self.config.beta * self.config.lambda, &g);
        let diff = &g - (tr.sens.transpose() * g_next) * self.config.beta;
        self.b = &self.b * (1.0 - alpha) + (zeta.transpose() * &tr.grad_cost) * alpha;
        self.m = &self.m * (1.0 - alpha) + (diff.transpose() * &zeta) * alpha;
        self.after_gradient_update(tr)?;
        self.end(tr);
        Ok(())
    }

    // Updates the centered-feature mean and returns (psi~(X(t)), psi~(X(t+1))).
    fn centered(&mut self, tr: &Transition, alpha: f64) -> (DVector<f64>, DVector<f64>) {
        self.eta_psi = &self.eta_psi * (1.0 - alpha) + &tr.psi * alpha;
        (&tr.psi - &self.eta_psi, &tr.psi_next - &self.eta_psi)
    }

    /// Average-cost LSTD(lambda) with centered cost `c - eta` and centered
    /// features `psi - eta_psi`.
    pub fn lstd_lambda_avg_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::LstdLambdaAvg])?;
        let alpha = self.begin(tr)?;
        let (pt, pt_next) = self.centered(tr, alpha);
        let zeta = self.decay_vector(self.config.lambda, &pt);
        let centered_cost = tr.cost - self.eta;
        self.b = &self.b * (1.0 - alpha) + &zeta * (alpha * centered_cost);
        self.m = &self.m * (1.0 - alpha) + (&zeta * (&pt - &pt_next).transpose()) * alpha;
        self.end(tr);
        Ok(())
    }

    /// Regenerative LSTD and LSTD(lambda): the eligibility restarts from
    /// `psi~(X(t))` whenever the previous step emptied the queue.
    pub fn regen_lstd_step(&mut self, tr: &Transition) -> Result<()> {
        self.expect(&[Algorithm::RegenLstd, Algorithm::RegenLstdLambda])?;
        let alpha = self.begin(tr)?;
        let (pt, pt_next) = self.centered(tr, alpha);
        let carry = if self.prev_regen { 0.0 } else { 1.0 };
        let lambda_variant = self.config.algorithm == Algorithm::RegenLstdLambda;
        let scale = if lambda_variant { carry * self.config.lambda } else { carry };
        let zeta = self.decay_vector(scale, &pt);
        let centered_cost = tr.cost - self.eta;
        self.b = &self.b * (1.0 - alpha) + &zeta * (alpha * centered_cost);
        let outer = if lambda_variant {
            &zeta * (&pt - &pt_next).transpose()
        } else {
            &pt * pt.transpose()
        };
        self.m = &self.m * (1.0 - alpha) + outer * alpha;
        self.end(tr);
        Ok(())
    }

    fn after_gradient_update(&mut self, tr: &Transition) -> Result<()> {
        if self.recovery.is_none() {
            return Ok(());
        }
        if self.t == 1 || self.t % self.config.cadence == 0 {
            self.theta_current = solve(&self.m, &self.b).0;
        }
        let theta = self.theta_current.clone();
        self.constant_recovery_step(tr, &theta)
    }

    /// Advances the constant-recovery means with `theta` over the active basis.
    pub fn constant_recovery_step(&mut self, tr: &Transition, theta: &DVector<f64>) -> Result<()> {
        let psi = self.active_rows(&tr.psi);
        if theta.len() != psi.len() {
            return Err(Error::Dimension {
                what: "theta",
                expected: psi.len(),
                got: theta.len(),
            });
        }
        let rec = self
            .recovery
            .as_mut()
            .ok_or_else(|| config_err("constant recovery needs a differential estimator with beta < 1"))?;
        rec.step(tr.cost, &psi, theta);
        Ok(())
    }

    /// Solves for theta on the fitted basis and embeds it in the full basis.
    pub fn finalize(&self) -> ThetaEstimate {
        let (sub, rank_deficient) = solve(&self.m, &self.b);
        let mut theta = vec![0.0; self.d];
        for (k, &j) in self.active.iter().enumerate() {
            theta[j] = sub[k];
        }
        ThetaEstimate {
            theta,
            kappa: self.recovery.as_ref().map_or(0.0, ConstantRecovery::kappa),
            eta: self.eta,
            rank_deficient,
        }
    }
}

#[cfg(test)]
mod tests;
