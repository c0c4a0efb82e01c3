//! Trials, replications and Bellman-error sweeps.
//!
//! A trial runs one algorithm over one simulated trajectory: `burn_in`
//! untracked steps from the model's initial state, then `iterations`
//! estimator updates, finalized at each checkpoint. Trial `i` uses seed
//! `base_seed ^ i`, so every trial is reproducible on its own and the
//! aggregation below does not depend on execution order.

mod config;
mod output;
mod presets;

pub use config::{AlgoSpec, ExperimentConfig, FeatureKind, ModelKind};
pub use output::{format_f64, write_estimates_csv, write_outputs, write_trajectory_csv};
pub use presets::{preset, PRESETS};

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config_err, Error, Result};
use crate::estimators::{EstimatorState, ThetaEstimate};
use crate::models::{FeatureMap, ModelSpec};
use crate::oracles::{bellman_error, default_grid, BellmanErrorCurve};
use crate::rng::{trial_seed, NoiseStream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    /// Index into `ExperimentConfig::algorithms`.
    pub position: usize,
    pub label: String,
    pub lambda: f64,
    pub trial_index: u64,
    pub seed: u64,
    /// Finalized estimates at each checkpoint, in increasing time.
    pub estimates: Vec<(u64, ThetaEstimate)>,
    /// Finalized estimates every `cadence` steps, if requested.
    pub trajectory: Vec<(u64, ThetaEstimate)>,
    pub wall_ms: f64,
}

impl TrialResult {
    /// Estimate at the last checkpoint.
    pub fn final_estimate(&self) -> &ThetaEstimate {
        &self.estimates.last().expect("at least one checkpoint").1
    }

    pub fn at(&self, t: u64) -> Option<&ThetaEstimate> {
        self.estimates.iter().find(|(s, _)| *s == t).map(|(_, e)| e)
    }
}

/// Drives `estimators` over one trajectory and calls `on_step(t, estimators)`
/// after each of the `iterations` updates.
pub fn simulate(
    model: &ModelSpec,
    features: &FeatureMap,
    estimators: &mut [EstimatorState],
    iterations: u64,
    burn_in: u64,
    rng: &mut NoiseStream,
    mut on_step: impl FnMut(u64, &[EstimatorState]),
) -> Result<()> {
    let mut x = model.initial_state();
    for _ in 0..burn_in {
        let noise = model.draw_noise(rng);
        x = model.advance(&x, &noise)?.0;
    }
    for t in 1..=iterations {
        let noise = model.draw_noise(rng);
        let tr = model.step(features, &x, &noise)?;
        for est in estimators.iter_mut() {
            est.update(&tr)?;
        }
        on_step(t, estimators);
        x = tr.x_next;
    }
    Ok(())
}

struct Recorder {
    checkpoints: Vec<u64>,
    cadence: Option<u64>,
    estimates: Vec<Vec<(u64, ThetaEstimate)>>,
    trajectories: Vec<Vec<(u64, ThetaEstimate)>>,
}

impl Recorder {
    fn new(n: usize, checkpoints: Vec<u64>, cadence: Option<u64>) -> Self {
        Self {
            checkpoints,
            cadence,
            estimates: vec![Vec::new(); n],
            trajectories: vec![Vec::new(); n],
        }
    }

    fn observe(&mut self, t: u64, estimators: &[EstimatorState]) {
        let at_checkpoint = self.checkpoints.binary_search(&t).is_ok();
        let at_cadence = self.cadence.is_some_and(|k| t % k == 0 || t == 1);
        if !at_checkpoint && !at_cadence {
            return;
        }
        for (i, est) in estimators.iter().enumerate() {
            let e = est.finalize();
            if at_cadence {
                self.trajectories[i].push((t, e.clone()));
            }
            if at_checkpoint {
                self.estimates[i].push((t, e));
            }
        }
    }
}

fn build_estimators(config: &ExperimentConfig, model: &ModelSpec, positions: &[usize]) -> Result<Vec<EstimatorState>> {
    positions
        .iter()
        .map(|&p| EstimatorState::new(config.estimator_config(&config.algorithms[p]), model.state_dim()))
        .collect()
}

fn run_positions(
    config: &ExperimentConfig,
    positions: &[usize],
    trial_index: u64,
    stream: u64,
    record_trajectory: bool,
) -> Result<Vec<TrialResult>> {
    let start = Instant::now();
    let model = config.model_spec()?;
    let features = config.feature_map();
    let mut estimators = build_estimators(config, &model, positions)?;
    let seed = trial_seed(config.seed, trial_index);
    let mut rng = NoiseStream::new(seed, stream);
    let cadence = record_trajectory.then_some(config.cadence);
    let mut rec = Recorder::new(positions.len(), config.effective_checkpoints(), cadence);
    simulate(
        &model,
        &features,
        &mut estimators,
        config.iterations,
        config.burn_in,
        &mut rng,
        |t, ests| rec.observe(t, ests),
    )
    .map_err(|e| Error::Trial {
        index: trial_index,
        source: Box::new(e),
    })?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let Recorder {
        estimates, trajectories, ..
    } = rec;
    Ok(positions
        .iter()
        .zip(estimates.into_iter().zip(trajectories))
        .map(|(&p, (estimates, trajectory))| {
            let algo = &config.algorithms[p];
            TrialResult {
                position: p,
                label: algo.label(config.lambda),
                lambda: algo.effective_lambda(config.lambda),
                trial_index,
                seed,
                estimates,
                trajectory,
                wall_ms,
            }
        })
        .collect())
}

/// Runs entry `position` of `config.algorithms` for trial `trial_index`.
pub fn run_trial(
    config: &ExperimentConfig,
    position: usize,
    trial_index: u64,
    record_trajectory: bool,
) -> Result<TrialResult> {
    config.validate()?;
    if position >= config.algorithms.len() {
        return Err(config_err(format!("no algorithm at position {position}")));
    }
    let stream = config.stream_for(position);
    Ok(run_positions(config, &[position], trial_index, stream, record_trajectory)?.remove(0))
}

/// Runs every configured algorithm on one shared trajectory (noise stream 0).
pub fn run_shared(config: &ExperimentConfig, trial_index: u64, record_trajectory: bool) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let positions: Vec<usize> = (0..config.algorithms.len()).collect();
    run_positions(config, &positions, trial_index, 0, record_trajectory)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` equal-width edges over `[min, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let finite = values.iter().copied().filter(|v| v.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        if !lo.is_finite() {
            return Self {
                edges: vec![f64::NAN; bins + 1],
                counts,
            };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|k| if k == bins { hi } else { lo + width * k as f64 })
            .collect();
        for v in values.iter().filter(|v| v.is_finite()) {
            let k = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub mean: f64,
    /// Sample variance with the `n - 1` denominator (0 for a single trial).
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl CoordinateSummary {
    pub fn new(name: impl Into<String>, values: &[f64], bins: usize) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            name: name.into(),
            mean,
            variance,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram: Histogram::new(values, bins),
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub lambda: f64,
    pub t: u64,
    pub n_trials: u64,
    pub rank_deficient: u64,
    /// `theta_0 .. theta_{d-1}`, then `kappa` and `eta`.
    pub coordinates: Vec<CoordinateSummary>,
}

impl AlgorithmSummary {
    pub fn coordinate(&self, name: &str) -> Option<&CoordinateSummary> {
        self.coordinates.iter().find(|c| c.name == name)
    }

    pub fn theta(&self, j: usize) -> &CoordinateSummary {
        &self.coordinates[j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WallStats {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Replication {
    /// Sorted by (algorithm position, trial index).
    pub trials: Vec<TrialResult>,
    /// One entry per (algorithm, checkpoint).
    pub summaries: Vec<AlgorithmSummary>,
    pub wall: WallStats,
}

impl Replication {
    pub fn summary(&self, label: &str, t: u64) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == label && s.t == t)
    }

    pub fn trials_for(&self, position: usize) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(move |r| r.position == position)
    }
}

/// Aggregates trials per (algorithm, checkpoint); input order is irrelevant.
pub fn summarize(config: &ExperimentConfig, trials: &[TrialResult]) -> Vec<AlgorithmSummary> {
    let mut sorted: Vec<&TrialResult> = trials.iter().collect();
    sorted.sort_by_key(|r| (r.position, r.trial_index));
    let d = config.feature_map().dim();
    let mut out = Vec::new();
    for (p, algo) in config.algorithms.iter().enumerate() {
        let rows: Vec<&TrialResult> = sorted.iter().copied().filter(|r| r.position == p).collect();
        if rows.is_empty() {
            continue;
        }
        for t in config.effective_checkpoints() {
            let ests: Vec<&ThetaEstimate> = rows.iter().filter_map(|r| r.at(t)).collect();
            let mut coordinates: Vec<CoordinateSummary> = (0..d)
                .map(|j| {
                    let v: Vec<f64> = ests.iter().map(|e| e.theta[j]).collect();
                    CoordinateSummary::new(format!("theta_{j}"), &v, config.bins)
                })
                .collect();
            let kappa: Vec<f64> = ests.iter().map(|e| e.kappa).collect();
            let eta: Vec<f64> = ests.iter().map(|e| e.eta).collect();
            coordinates.push(CoordinateSummary::new("kappa", &kappa, config.bins));
            coordinates.push(CoordinateSummary::new("eta", &eta, config.bins));
            out.push(AlgorithmSummary {
                algorithm: algo.label(config.lambda),
                lambda: algo.effective_lambda(config.lambda),
                t,
                n_trials: ests.len() as u64,
                rank_deficient: ests.iter().filter(|e| e.rank_deficient).count() as u64,
                coordinates,
            });
        }
    }
    out
}

/// Runs `reps` trials of every configured algorithm in parallel and
/// aggregates them. With common random numbers all algorithms of a trial
/// share one trajectory.
pub fn replicate(config: &ExperimentConfig) -> Result<Replication> {
    config.validate()?;
    let n_alg = config.algorithms.len();
    let trials: Vec<TrialResult> = if config.common_random_numbers {
        let all: Vec<usize> = (0..n_alg).collect();
        let nested: Vec<Vec<TrialResult>> = (0..config.reps)
            .into_par_iter()
            .map(|i| run_positions(config, &all, i, 0, false))
            .collect::<Result<_>>()?;
        nested.into_iter().flatten().collect()
    } else {
        let jobs: Vec<(usize, u64)> = (0..n_alg).flat_map(|p| (0..config.reps).map(move |i| (p, i))).collect();
        jobs.into_par_iter()
            .map(|(p, i)| Ok(run_positions(config, &[p], i, config.stream_for(p), false)?.remove(0)))
            .collect::<Result<_>>()?
    };
    let mut trials = trials;
    trials.sort_by_key(|r| (r.position, r.trial_index));
    let summaries = summarize(config, &trials);
    let walls: Vec<f64> = trials.iter().map(|r| r.wall_ms).collect();
    let wall = WallStats {
        mean_ms: walls.iter().sum::<f64>() / walls.len() as f64,
        min_ms: walls.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: walls.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(Replication {
        trials,
        summaries,
        wall,
    })
}

/// Runs `replicate` inside a pool of `threads` workers (all cores if `None`).
pub fn replicate_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<Replication> {
    match threads {
        None => replicate(config),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| config_err(format!("cannot build worker pool: {e}")))?;
            pool.install(|| replicate(config))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellmanRecord {
    pub algorithm: String,
    pub t: u64,
    pub curve: BellmanErrorCurve,
}

/// Bellman-error curves of the replication-mean estimate at each checkpoint.
/// `eta(T)` is the replication-mean average-cost estimate at the largest
/// checkpoint, shared by all curves of an algorithm.
pub fn bellman_from_replication(
    config: &ExperimentConfig,
    rep: &Replication,
    checkpoints: &[u64],
) -> Result<Vec<BellmanRecord>> {
    let model = config.model_spec()?;
    let features = config.feature_map();
    let d = features.dim();
    let grid = default_grid(config.delta, config.bellman_max_x);
    let Some(&last) = checkpoints.iter().max() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (p, algo) in config.algorithms.iter().enumerate() {
        let mean_at = |t: u64| -> Result<(Vec<f64>, f64)> {
            let ests: Vec<&ThetaEstimate> = rep.trials_for(p).filter_map(|r| r.at(t)).collect();
            if ests.is_empty() {
                return Err(config_err(format!("no estimates recorded at T = {t}")));
            }
            let n = ests.len() as f64;
            let theta = (0..d).map(|j| ests.iter().map(|e| e.theta[j]).sum::<f64>() / n).collect();
            let eta = ests.iter().map(|e| e.eta).sum::<f64>() / n;
            Ok((theta, eta))
        };
        let (_, eta_t) = mean_at(last)?;
        for &t in checkpoints {
            let (theta, _) = mean_at(t)?;
            out.push(BellmanRecord {
                algorithm: algo.label(config.lambda),
                t,
                curve: bellman_error(&model, &features, &theta, eta_t, &grid)?,
            });
        }
    }
    Ok(out)
}

/// Replicates `config` with the given checkpoints and evaluates the Bellman
/// error of each algorithm's mean estimate at every checkpoint.
pub fn bellman_sweep(config: &ExperimentConfig, checkpoints: &[u64]) -> Result<(Replication, Vec<BellmanRecord>)> {
    if !matches!(config.model, ModelKind::SpeedScalingGeo) {
        return Err(config_err("the Bellman sweep needs the geometric speed-scaling model"));
    }
    let mut cfg = config.clone();
    if !checkpoints.is_empty() {
        cfg.iterations = cfg.iterations.max(*checkpoints.iter().max().unwrap());
        cfg.checkpoints = checkpoints.to_vec();
    }
    let rep = replicate(&cfg)?;
    let curves = bellman_from_replication(&cfg, &rep, checkpoints)?;
    Ok((rep, curves))
}
