//! Acceptance checks shared by the `verify` command and the acceptance test
//! target. Each check returns a pass/fail outcome with a one-line detail.
//!
//! [`Scale::Full`] runs every check at its stated size. [`Scale::Quick`]
//! shrinks horizons and replication counts for a fast smoke run; tolerances
//! are unchanged.

use std::time::Instant;

use crate::error::Result;
use crate::estimators::{Algorithm, EstimatorConfig, EstimatorState};
use crate::harness::{
    self, bellman_from_replication, replicate, run_shared, run_trial, write_estimates_csv, AlgoSpec,
    ExperimentConfig, ModelKind,
};
use crate::models::{FeatureMap, ModelSpec};
use crate::oracles::{
    analytic_linear_theta, gradient_exchange_check, mc_fixed_point, sensitivity_fd_check, truncated_series_theta,
    FixedPointKind,
};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    Quick,
}

impl Scale {
    fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "linear consistency, beta=0.9"),
    (2, "linear consistency, beta=0.99"),
    (3, "variance reduction, beta=0.9"),
    (4, "variance reduction grows with beta"),
    (5, "grad-LSTD(1) equals grad-LSTD"),
    (6, "lambda=1 trace equivalence"),
    (7, "gradient exchange identity"),
    (8, "sensitivity finite difference"),
    (9, "geometric queue variance and Bellman error"),
    (10, "oracle self-consistency"),
    (11, "preset determinism"),
];

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

fn linear_config(beta: f64, algorithms: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::Linear,
        beta,
        algorithms: algorithms.iter().map(|a| a.parse().expect("known algorithm")).collect(),
        ..Default::default()
    }
}

fn linear_consistency(beta: f64, tol2: f64, tol1: f64, scale: Scale) -> Result<(bool, String)> {
    let exact = analytic_linear_theta(0.7, beta, 1.0)?;
    let mut cfg = linear_config(beta, &["grad_lstd"]);
    cfg.iterations = scale.pick(1_000_000, 200_000);
    let est = run_trial(&cfg, 0, 0, false)?.final_estimate().clone();
    let (e2, e1) = (rel(est.theta[1], exact.theta2), rel(est.kappa, exact.theta1));
    Ok((
        e2 <= tol2 && e1 <= tol1,
        format!(
            "T={} theta2={:.6} (target {:.6}, err {:.2}%), kappa={:.4} (target {:.4}, err {:.2}%)",
            cfg.iterations,
            est.theta[1],
            exact.theta2,
            100.0 * e2,
            est.kappa,
            exact.theta1,
            100.0 * e1
        ),
    ))
}

/// `var_LSTD(theta_2) / var_gradLSTD(theta_2)` over replications at `T = 1000`.
pub fn variance_ratio(beta: f64, reps: u64, seed: u64) -> Result<f64> {
    let mut cfg = linear_config(beta, &["lstd", "grad_lstd"]);
    cfg.iterations = 1_000;
    cfg.reps = reps;
    cfg.seed = seed;
    let rep = replicate(&cfg)?;
    let var = |label: &str| rep.summary(label, 1_000).expect("summary").theta(1).variance;
    Ok(var("lstd") / var("grad_lstd"))
}

fn criterion_3_4(scale: Scale) -> Result<((bool, String), (bool, String))> {
    let reps = scale.pick(200, 200);
    let r9 = variance_ratio(0.9, reps, 0)?;
    let r99 = variance_ratio(0.99, reps, 0)?;
    Ok((
        (r9 >= 3.0, format!("{reps} reps, T=1000: var ratio {r9:.2} (need >= 3)")),
        (r99 > r9, format!("ratio at beta=0.99 {r99:.2} vs at beta=0.9 {r9:.2}")),
    ))
}

fn criterion_5(scale: Scale) -> Result<(bool, String)> {
    let mut cfg = linear_config(0.9, &["grad_lstd", "grad_lstd_lambda@1"]);
    cfg.iterations = scale.pick(1_000_000, 100_000);
    let res = run_shared(&cfg, 0, false)?;
    let (a, b) = (res[0].final_estimate().theta[1], res[1].final_estimate().theta[1]);
    let e = rel(b, a);
    Ok((e <= 0.01, format!("T={} theta2 {a:.8} vs {b:.8} (rel diff {e:.2e})", cfg.iterations)))
}

/// Steps a pair of estimators over one trajectory and counts steps where the
/// eligibility traces differ in any bit.
pub fn trace_mismatches(
    model: &ModelSpec,
    features: &FeatureMap,
    pair: (EstimatorConfig, EstimatorConfig),
    steps: u64,
    seed: u64,
) -> Result<u64> {
    let mut a = EstimatorState::new(pair.0, 1)?;
    let mut b = EstimatorState::new(pair.1, 1)?;
    let mut rng = NoiseStream::new(seed, 0);
    let mut x = model.initial_state();
    let mut mismatches = 0;
    for _ in 0..steps {
        let tr = model.step(features, &x, &model.draw_noise(&mut rng))?;
        a.update(&tr)?;
        b.update(&tr)?;
        if a.eligibility() != b.eligibility() {
            mismatches += 1;
        }
        x = tr.x_next;
    }
    Ok(mismatches)
}

fn criterion_6() -> Result<(bool, String)> {
    let model = ModelSpec::linear(0.7, 1.0, 0.9)?;
    let f = FeatureMap::quadratic();
    let mask = f.constant_mask();
    let cfg = |alg, lambda| EstimatorConfig::new(alg, 0.9, lambda, mask.clone());
    let classic = trace_mismatches(
        &model,
        &f,
        (cfg(Algorithm::LstdLambda, 1.0), cfg(Algorithm::Lstd, 0.0)),
        10_000,
        1,
    )?;
    let diff = trace_mismatches(
        &model,
        &f,
        (cfg(Algorithm::GradLstdLambda, 1.0), cfg(Algorithm::GradLstd, 0.0)),
        10_000,
        1,
    )?;
    Ok((
        classic == 0 && diff == 0,
        format!("10000 steps: LSTD(1)/LSTD mismatches {classic}, grad-LSTD(1)/grad-LSTD mismatches {diff}"),
    ))
}

fn criterion_7(scale: Scale) -> Result<(bool, String)> {
    let n = scale.pick(100_000, 20_000);
    let lin = ModelSpec::linear(0.7, 1.0, 0.9)?;
    let expo = ModelSpec::speed_scaling_exponential(0.5, 1.0)?;
    let a: f64 = 0.7;
    let mut ok = true;
    let sq = |x: f64| x * x;
    let dsq = |x: f64| 2.0 * x;
    for (i, t) in [0usize, 1, 3, 10].into_iter().enumerate() {
        let c = gradient_exchange_check(&lin, sq, dsq, t, 1.0, n, 1e-6, 100 + i as u64)?;
        ok &= c.passes(3.0) && c.hits(2.0 * a.powi(2 * t as i32), 3.0);
    }
    let cube = gradient_exchange_check(&lin, |x| x, |_| 1.0, 3, 1.0, n, 1e-6, 110)?;
    ok &= cube.passes(3.0) && cube.hits(a.powi(3), 3.0);
    let quad = gradient_exchange_check(&lin, sq, dsq, 2, 1.0, n, 1e-6, 111)?;
    ok &= quad.passes(3.0) && quad.hits(2.0 * a.powi(4), 3.0);
    let mut expo_detail = Vec::new();
    for (i, t) in [1usize, 3].into_iter().enumerate() {
        let c = gradient_exchange_check(&expo, sq, dsq, t, 3.0, n, 1e-6, 120 + i as u64)?;
        ok &= c.passes(3.0);
        expo_detail.push(format!("t={t}: {:.5} vs {:.5} (se {:.1e})", c.lhs, c.rhs, c.stderr));
    }
    Ok((
        ok,
        format!(
            "{n} samples; linear a^3 -> {:.6}, 2a^4 -> {:.6}; queue {}",
            cube.rhs,
            quad.rhs,
            expo_detail.join(", ")
        ),
    ))
}

fn criterion_8() -> Result<(bool, String)> {
    let lin = sensitivity_fd_check(&ModelSpec::linear(0.7, 1.0, 0.9)?, 1.0, 20, 1e-6, 200, 7)?;
    let q = sensitivity_fd_check(&ModelSpec::speed_scaling_exponential(0.5, 1.0)?, 3.0, 20, 1e-6, 200, 8)?;
    Ok((
        lin < 1e-4 && q < 1e-4,
        format!("max deviation linear {lin:.2e}, exponential queue {q:.2e} (need < 1e-4)"),
    ))
}

/// Replication data behind the geometric-queue check.
pub struct GeometricStudy {
    pub std_grad0: [f64; 2],
    pub std_regen: [f64; 2],
    pub grad_eb_early: f64,
    pub grad_eb_late: f64,
    pub regen_eb_early: f64,
}

pub fn geometric_study(reps: u64, horizon: u64, seed: u64) -> Result<GeometricStudy> {
    let cfg = ExperimentConfig {
        model: ModelKind::SpeedScalingGeo,
        beta: 1.0,
        algorithms: vec![
            AlgoSpec::new(Algorithm::RegenLstd),
            AlgoSpec::new(Algorithm::GradLstd),
            AlgoSpec::with_lambda(Algorithm::GradLstdLambda, 0.0),
        ],
        iterations: horizon,
        checkpoints: vec![1_000, horizon],
        reps,
        seed,
        ..Default::default()
    };
    let rep = replicate(&cfg)?;
    let curves = bellman_from_replication(&cfg, &rep, &[1_000, horizon])?;
    let eb = |label: &str, t: u64| {
        curves
            .iter()
            .find(|c| c.algorithm == label && c.t == t)
            .map(|c| c.curve.mean_abs())
            .expect("curve")
    };
    let std = |label: &str| {
        let s = rep.summary(label, horizon).expect("summary");
        [s.theta(0).std_dev(), s.theta(1).std_dev()]
    };
    Ok(GeometricStudy {
        std_grad0: std("grad_lstd_lambda@0"),
        std_regen: std("regen_lstd"),
        grad_eb_early: eb("grad_lstd", 1_000),
        grad_eb_late: eb("grad_lstd", horizon),
        regen_eb_early: eb("regen_lstd", 1_000),
    })
}

fn criterion_9(scale: Scale) -> Result<(bool, String)> {
    let (reps, horizon) = scale.pick((100, 100_000), (30, 20_000));
    let s = geometric_study(reps, horizon, 0)?;
    let a = s.std_grad0[0] < s.std_regen[0] && s.std_grad0[1] < s.std_regen[1];
    let b = rel(s.grad_eb_early, s.grad_eb_late) <= 0.10;
    let c = s.grad_eb_early < s.regen_eb_early;
    Ok((
        a && b && c,
        format!(
            "{reps} reps, T={horizon}: (a) std grad(0) [{:.3e}, {:.3e}] vs regen [{:.3e}, {:.3e}] {}; \
             (b) grad mean|E_B| T=1e3 {:.4e} vs T={horizon} {:.4e} {}; (c) regen T=1e3 {:.4e} {}",
            s.std_grad0[0],
            s.std_grad0[1],
            s.std_regen[0],
            s.std_regen[1],
            if a { "ok" } else { "FAIL" },
            s.grad_eb_early,
            s.grad_eb_late,
            if b { "ok" } else { "FAIL" },
            s.regen_eb_early,
            if c { "ok" } else { "FAIL" },
        ),
    ))
}

fn criterion_10(scale: Scale) -> Result<(bool, String)> {
    let mut digits_ok = true;
    for beta in [0.9, 0.99] {
        let exact = analytic_linear_theta(0.7, beta, 1.0)?;
        let (s1, s2) = truncated_series_theta(0.7, beta, 1.0)?;
        digits_ok &= rel(s1, exact.theta1) < 1e-10 && rel(s2, exact.theta2) < 1e-10;
    }
    let n = scale.pick(1_000_000, 200_000);
    let model = ModelSpec::linear(0.7, 1.0, 0.9)?;
    let fp = mc_fixed_point(&model, &FeatureMap::quadratic(), FixedPointKind::Differential, 1.0, 0.9, n, 3)?;
    let exact = analytic_linear_theta(0.7, 0.9, 1.0)?.theta2;
    let z = (fp.theta[1] - exact).abs() / fp.stderr[1];
    Ok((
        digits_ok && z < 3.0,
        format!(
            "series agrees to 1e-10: {digits_ok}; MC fixed point theta2 {:.6} +- {:.1e} vs {exact:.6} ({z:.2} stderr)",
            fp.theta[1], fp.stderr[1]
        ),
    ))
}

/// Runs each preset twice (scaled down) and compares `estimates.csv` bytes.
fn criterion_11(scale: Scale) -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!("gradtd-determinism-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (reps, horizon) = scale.pick((8, 20_000), (3, 2_000));
    let mut identical = 0;
    for name in harness::PRESETS {
        let mut cfg = harness::preset(name)?;
        cfg.reps = reps;
        cfg.iterations = horizon;
        if !cfg.checkpoints.is_empty() {
            cfg.checkpoints.retain(|&c| c < horizon);
            cfg.checkpoints.push(horizon);
        }
        let mut bytes = Vec::new();
        for (run, threads) in [(0, None), (1, Some(1))] {
            let rep = harness::replicate_with_threads(&cfg, threads)?;
            let path = dir.join(format!("{name}-{run}.csv"));
            write_estimates_csv(&path, &rep.trials)?;
            bytes.push(std::fs::read(&path)?);
        }
        if bytes[0] == bytes[1] && !bytes[0].is_empty() {
            identical += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok((
        identical == harness::PRESETS.len(),
        format!(
            "{identical}/{} presets bit-identical across reruns ({reps} reps, T={horizon}, parallel vs 1 thread)",
            harness::PRESETS.len()
        ),
    ))
}

fn outcome(id: u8, start: Instant, r: Result<(bool, String)>) -> CriterionOutcome {
    let title = CRITERIA[id as usize - 1].1;
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the selected criteria (all if `only` is empty), in order, calling
/// `report` as each one finishes.
pub fn run_criteria(scale: Scale, only: &[u8], mut report: impl FnMut(&CriterionOutcome)) -> Vec<CriterionOutcome> {
    let wanted = |id: u8| only.is_empty() || only.contains(&id);
    let mut out = Vec::new();
    let mut push = |o: CriterionOutcome| {
        report(&o);
        out.push(o);
    };
    if wanted(1) {
        let s = Instant::now();
        push(outcome(1, s, linear_consistency(0.9, 0.02, 0.03, scale)));
    }
    if wanted(2) {
        let s = Instant::now();
        push(outcome(2, s, linear_consistency(0.99, 0.02, 0.05, scale)));
    }
    if wanted(3) || wanted(4) {
        let s = Instant::now();
        match criterion_3_4(scale) {
            Ok((c3, c4)) => {
                if wanted(3) {
                    push(outcome(3, s, Ok(c3)));
                }
                if wanted(4) {
                    push(outcome(4, s, Ok(c4)));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for id in [3, 4].into_iter().filter(|&i| wanted(i)) {
                    push(outcome(id, s, Err(crate::Error::Oracle(msg.clone()))));
                }
            }
        }
    }
    type Check = fn(Scale) -> Result<(bool, String)>;
    let rest: [(u8, Check); 7] = [
        (5, criterion_5),
        (6, |_| criterion_6()),
        (7, criterion_7),
        (8, |_| criterion_8()),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    for (id, check) in rest {
        if wanted(id) {
            let s = Instant::now();
            push(outcome(id, s, check(scale)));
        }
    }
    out
}
