//! Brute-force stationary fixed point `M theta* = b` of LSTD(lambda) and its
//! differential analog.
//!
//! The eligibility at time `t` is formed from its explicit series
//! `zeta(t) = sum_k (beta lambda)^k A(t) ... A(t-k+1) g(X(t-k))` over a window
//! long enough for the neglected tail to fall below `1e-13`, and `M`, `b`
//! are plain sample means over a long stationary stretch of the chain.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, Result};
use crate::estimators::solve;
use crate::models::{Dynamics, FeatureMap, ModelSpec};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedPointKind {
    /// `M = E[zeta (psi(X(t)) - beta psi(X(t+1)))^T]`, `b = E[zeta c(X(t))]`.
    Standard,
    /// `M = E[(grad psi(X(t)) - beta A(t+1) grad psi(X(t+1)))^T zeta]`,
    /// `b = E[zeta^T grad c(X(t))]`, on the non-constant basis functions.
    Differential,
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    /// Solution embedded in the full basis (skipped constants are zero).
    pub theta: Vec<f64>,
    /// Batch-means standard error of each coordinate.
    pub stderr: Vec<f64>,
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    /// The estimated `M` needed the pseudo-inverse.
    pub singular: bool,
}

const BURN_IN: usize = 1_000;
const BATCHES: usize = 20;
const MAX_WINDOW: usize = 4_000;
const TAIL: f64 = 1e-13;
pub const MIN_SAMPLES: usize = 100_000;

struct Record {
    psi: Vec<f64>,
    grad: Vec<f64>,
    sens: f64,
    cost: f64,
    grad_cost: f64,
}

fn sens_bound(model: &ModelSpec) -> f64 {
    match model.dynamics {
        Dynamics::Linear { a, .. } => a.abs(),
        Dynamics::SpeedScaling { .. } => 1.0,
    }
}

pub fn mc_fixed_point(
    model: &ModelSpec,
    features: &FeatureMap,
    kind: FixedPointKind,
    lambda: f64,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FixedPoint> {
    if n_samples < MIN_SAMPLES {
        return Err(config_err(format!("fixed-point oracle needs at least {MIN_SAMPLES} samples")));
    }
    if !(0.0..=1.0).contains(&lambda) || !(beta > 0.0 && beta <= 1.0) {
        return Err(config_err("lambda must lie in [0, 1] and beta in (0, 1]"));
    }
    if model.state_dim() != 1 {
        return Err(config_err("fixed-point oracle supports scalar states only"));
    }
    let decay = beta * lambda;
    let rate = match kind {
        FixedPointKind::Standard => decay,
        FixedPointKind::Differential => decay * sens_bound(model),
    };
    if kind == FixedPointKind::Standard && rate >= 1.0 {
        return Err(config_err("standard fixed point needs beta * lambda < 1"));
    }
    let window = if rate == 0.0 {
        0
    } else if rate < 1.0 {
        ((TAIL.ln() / rate.ln()).ceil() as usize).min(MAX_WINDOW)
    } else {
        MAX_WINDOW
    };

    let cols: Vec<usize> = match kind {
        FixedPointKind::Standard => (0..features.dim()).collect(),
        FixedPointKind::Differential => {
            let mask = features.constant_mask();
            (0..features.dim()).filter(|&j| !mask[j]).collect()
        }
    };
    let k = cols.len();
    if k == 0 {
        return Err(config_err("no basis functions to fit"));
    }

    let mut rng = NoiseStream::new(seed, 0);
    let mut x = model.initial_state();
    for _ in 0..BURN_IN {
        let noise = model.draw_noise(&mut rng);
        x = model.advance(&x, &noise)?.0;
    }
    let record_at = |x: &DVector<f64>| -> Result<Record> {
        let (psi, grad) = model.features_at(features, x)?;
        Ok(Record {
            psi: cols.iter().map(|&j| psi[j]).collect(),
            grad: cols.iter().map(|&j| grad[(0, j)]).collect(),
            sens: model.sensitivity(x[0]),
            cost: model.cost(x[0]),
            grad_cost: model.grad_cost(x[0]),
        })
    };

    // history[0] is the newest record, X(t+1); history[1] is X(t).
    let mut history: VecDeque<Record> = VecDeque::with_capacity(window + 3);
    let advance = |x: &mut DVector<f64>, rng: &mut NoiseStream| -> Result<()> {
        let noise = model.draw_noise(rng);
        *x = model.advance(x, &noise)?.0;
        Ok(())
    };
    for _ in 0..window + 2 {
        history.push_front(record_at(&x)?);
        advance(&mut x, &mut rng)?;
    }

    let per_batch = n_samples / BATCHES;
    let mut m_total = DMatrix::<f64>::zeros(k, k);
    let mut b_total = DVector::<f64>::zeros(k);
    let mut batch_thetas = Vec::with_capacity(BATCHES);
    let mut zeta = vec![0.0; k];
    for _ in 0..BATCHES {
        let mut m_sum = DMatrix::<f64>::zeros(k, k);
        let mut b_sum = DVector::<f64>::zeros(k);
        for _ in 0..per_batch {
            let next = &history[0];
            let now = &history[1];
            // zeta(t) from the explicit series over history[1..].
            let base = match kind {
                FixedPointKind::Standard => &now.psi,
                FixedPointKind::Differential => &now.grad,
            };
            zeta.copy_from_slice(base);
            let mut weight = 1.0;
            for lag in 1..=window {
                let older = &history[1 + lag];
                weight *= decay;
                if kind == FixedPointKind::Differential {
                    weight *= older.sens;
                }
                if weight == 0.0 || weight.abs() < TAIL * 1e-3 {
                    break;
                }
                let g = match kind {
                    FixedPointKind::Standard => &older.psi,
                    FixedPointKind::Differential => &older.grad,
                };
                for (z, gi) in zeta.iter_mut().zip(g) {
                    *z += weight * gi;
                }
            }
            match kind {
                FixedPointKind::Standard => {
                    for i in 0..k {
                        b_sum[i] += zeta[i] * now.cost;
                        for j in 0..k {
                            m_sum[(i, j)] += zeta[i] * (now.psi[j] - beta * next.psi[j]);
                        }
                    }
                }
                FixedPointKind::Differential => {
                    for i in 0..k {
                        b_sum[i] += zeta[i] * now.grad_cost;
                        for j in 0..k {
                            let td = now.grad[i] - beta * now.sens * next.grad[i];
                            m_sum[(i, j)] += td * zeta[j];
                        }
                    }
                }
            }
            history.pop_back();
            history.push_front(record_at(&x)?);
            advance(&mut x, &mut rng)?;
        }
        let n = per_batch as f64;
        batch_thetas.push(solve(&(&m_sum / n), &(&b_sum / n)).0);
        m_total += m_sum;
        b_total += b_sum;
    }
    let n = (per_batch * BATCHES) as f64;
    let m = m_total / n;
    let b = b_total / n;
    let (sub, singular) = solve(&m, &b);

    let mut theta = vec![0.0; features.dim()];
    let mut stderr = vec![0.0; features.dim()];
    for (c, &j) in cols.iter().enumerate() {
        theta[j] = sub[c];
        let mean = batch_thetas.iter().map(|t| t[c]).sum::<f64>() / BATCHES as f64;
        let var = batch_thetas.iter().map(|t| (t[c] - mean).powi(2)).sum::<f64>()
            / (BATCHES - 1) as f64;
        stderr[j] = (var / BATCHES as f64).sqrt();
    }
    Ok(FixedPoint {
        theta,
        stderr,
        m,
        b,
        singular,
    })
}
