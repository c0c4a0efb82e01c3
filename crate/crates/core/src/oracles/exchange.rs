//! Monte-Carlo checks of the sensitivity process.
//!
//! `gradient_exchange_check` compares `d/dx E_x[f(X(t))]` (central difference
//! over common-noise trajectories) with `E_x[S(t) f'(X(t))]`, where
//! `S(t) = A(t) ... A(1)` is accumulated from the per-step factors.

use crate::error::{config_err, Result};
use crate::models::ModelSpec;
use crate::rng::NoiseStream;
use nalgebra::DVector;

/// Absolute slack added to the `k * stderr` band. It covers cancellation in
/// the central difference when the per-sample difference has no variance.
pub const ROUNDOFF_FLOOR: f64 = 1e-9;

pub const MAX_HORIZON: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExchangeCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the per-sample difference `lhs_i - rhs_i`.
    pub stderr: f64,
    /// Standard error of `rhs` alone.
    pub rhs_stderr: f64,
    pub n_samples: usize,
}

impl ExchangeCheck {
    pub fn passes(&self, sigmas: f64) -> bool {
        (self.lhs - self.rhs).abs() < sigmas * self.stderr + ROUNDOFF_FLOOR
    }

    /// Whether `rhs` agrees with an exact expectation.
    pub fn hits(&self, target: f64, sigmas: f64) -> bool {
        (self.rhs - target).abs() < sigmas * self.rhs_stderr + ROUNDOFF_FLOOR
    }
}

fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

#[allow(clippy::too_many_arguments)]
pub fn gradient_exchange_check(
    model: &ModelSpec,
    f: impl Fn(f64) -> f64,
    grad_f: impl Fn(f64) -> f64,
    horizon: usize,
    x0: f64,
    n_samples: usize,
    fd_step: f64,
    seed: u64,
) -> Result<ExchangeCheck> {
    if !model.is_smooth() {
        return Err(config_err("gradient exchange needs a smooth model (not the lattice queue)"));
    }
    if horizon > MAX_HORIZON {
        return Err(config_err(format!("horizon must be at most {MAX_HORIZON}")));
    }
    if !(fd_step > 0.0) || n_samples < 2 {
        return Err(config_err("need fd_step > 0 and at least two samples"));
    }
    if model.is_queue() && x0 - fd_step < 0.0 {
        return Err(config_err("x0 - fd_step must stay in the state space"));
    }
    let mut rng = NoiseStream::new(seed, 0);
    let (mut sum_l, mut sum_r) = (0.0, 0.0);
    let (mut sum_d, mut sum_d2, mut sum_r2) = (0.0, 0.0, 0.0);
    for _ in 0..n_samples {
        let (mut lo, mut mid, mut hi) = (scalar(x0 - fd_step), scalar(x0), scalar(x0 + fd_step));
        let mut sens = 1.0;
        for _ in 0..horizon {
            let noise = model.draw_noise(&mut rng);
            let (next, a, _) = model.advance(&mid, &noise)?;
            sens *= a[(0, 0)];
            mid = next;
            lo = model.advance(&lo, &noise)?.0;
            hi = model.advance(&hi, &noise)?.0;
        }
        let l = (f(hi[0]) - f(lo[0])) / (2.0 * fd_step);
        let r = sens * grad_f(mid[0]);
        sum_l += l;
        sum_r += r;
        sum_r2 += r * r;
        let d = l - r;
        sum_d += d;
        sum_d2 += d * d;
    }
    let n = n_samples as f64;
    let var = |s: f64, s2: f64| ((s2 - s * s / n) / (n - 1.0)).max(0.0);
    Ok(ExchangeCheck {
        lhs: sum_l / n,
        rhs: sum_r / n,
        stderr: (var(sum_d, sum_d2) / n).sqrt(),
        rhs_stderr: (var(sum_r, sum_r2) / n).sqrt(),
        n_samples,
    })
}

/// Largest deviation, over `n_paths` common-noise trajectories and all
/// `t <= horizon`, between `A(t) ... A(1)` and `(X_eps(t) - X(t)) / eps`.
pub fn sensitivity_fd_check(
    model: &ModelSpec,
    x0: f64,
    horizon: usize,
    eps: f64,
    n_paths: usize,
    seed: u64,
) -> Result<f64> {
    if !model.is_smooth() {
        return Err(config_err("sensitivity check needs a smooth model"));
    }
    if !(eps > 0.0) {
        return Err(config_err("eps must be positive"));
    }
    let mut rng = NoiseStream::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..n_paths {
        let (mut x, mut xe) = (scalar(x0), scalar(x0 + eps));
        let mut sens = 1.0;
        for _ in 0..horizon {
            let noise = model.draw_noise(&mut rng);
            let (next, a, _) = model.advance(&x, &noise)?;
            sens *= a[(0, 0)];
            x = next;
            xe = model.advance(&xe, &noise)?.0;
            worst = worst.max(((xe[0] - x[0]) / eps - sens).abs());
        }
    }
    Ok(worst)
}
