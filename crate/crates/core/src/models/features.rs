//! Monomial feature maps for scalar state spaces.

use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, Error, Result};

/// Basis `psi_j(x) = x^{p_j}` on a scalar state, with its gradient.
///
/// A zero power is the constant function and is flagged in the constant mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    powers: Vec<f64>,
}

impl FeatureMap {
    pub fn monomials(powers: &[f64]) -> Result<Self> {
        if powers.is_empty() {
            return Err(config_err("feature map needs at least one basis function"));
        }
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(config_err("monomial powers must be finite and non-negative"));
        }
        Ok(Self {
            powers: powers.to_vec(),
        })
    }

    /// `psi(x) = (1, x^2)`.
    pub fn quadratic() -> Self {
        Self {
            powers: vec![0.0, 2.0],
        }
    }

    /// `psi(x) = (x^{3/2}, x)`.
    pub fn speed_scaling() -> Self {
        Self {
            powers: vec![1.5, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.powers.len()
    }

    pub fn state_dim(&self) -> usize {
        1
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn constant_mask(&self) -> Vec<bool> {
        self.powers.iter().map(|&p| p == 0.0).collect()
    }

    pub fn values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = scalar(x)?;
        let psi = DVector::from_iterator(self.dim(), self.powers.iter().map(|&p| monomial(s, p)));
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature values"));
        }
        Ok(psi)
    }

    /// Returns `psi(x)` and the `l x d` gradient `[grad psi]_{i,j} = d psi_j / d x_i`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let psi = self.values(x)?;
        let s = x[0];
        let grad = DMatrix::from_iterator(
            1,
            self.dim(),
            self.powers.iter().map(|&p| {
                if p == 0.0 {
                    0.0
                } else {
                    p * monomial(s, p - 1.0)
                }
            }),
        );
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature gradient"));
        }
        Ok((psi, grad))
    }
}

fn scalar(x: &DVector<f64>) -> Result<f64> {
    if x.len() != 1 {
        return Err(Error::Dimension {
            what: "feature input",
            expected: 1,
            got: x.len(),
        });
    }
    if !x[0].is_finite() {
        return Err(Error::NonFinite("feature input"));
    }
    Ok(x[0])
}

// Integer and half-integer powers are evaluated exactly where possible.
fn monomial(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    if p.fract() == 0.0 && p.abs() < 64.0 {
        return x.powi(p as i32);
    }
    if (p - 0.5).fract() == 0.0 && p.abs() < 64.0 {
        return x.powi((p - 0.5) as i32) * x.sqrt();
    }
    x.powf(p)
}
