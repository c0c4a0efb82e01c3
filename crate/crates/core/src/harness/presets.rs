//! Named configurations for the published experiments.
//!
//! Stated in the source experiments: `a = 0.7`, `beta` in {0.9, 0.99},
//! `epsilon = 0.5`, `p_A = 0.04`, `Delta = 1/24`, the algorithm sets, the
//! horizons `T` and the 1000 repetitions of the linear and Bellman-error
//! studies. Chosen here because they are not stated: unit noise variance,
//! 1000 burn-in steps from the origin, `M(0) = 1e-3 I`, 1000 repetitions for
//! the speed-scaling histograms, 50 histogram bins, independent noise streams
//! per algorithm and base seed 0.

use crate::error::{config_err, Result};
use crate::estimators::Algorithm;

use super::config::{AlgoSpec, ExperimentConfig, ModelKind};

pub const PRESETS: [&str; 5] = ["fig1-beta0.9", "fig1-beta0.99", "fig2-expo", "fig3-geo", "fig4-bellman"];

fn geo_algorithms() -> Vec<AlgoSpec> {
    vec![
        AlgoSpec::new(Algorithm::RegenLstd),
        AlgoSpec::with_lambda(Algorithm::LstdLambdaAvg, 0.0),
        AlgoSpec::new(Algorithm::GradLstd),
        AlgoSpec::with_lambda(Algorithm::GradLstdLambda, 0.0),
        AlgoSpec::with_lambda(Algorithm::GradLstdLambda, 0.5),
    ]
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        reps: 1000,
        seed: 0,
        ..Default::default()
    };
    let linear = |beta: f64| ExperimentConfig {
        model: ModelKind::Linear,
        beta,
        algorithms: vec![AlgoSpec::new(Algorithm::Lstd), AlgoSpec::new(Algorithm::GradLstd)],
        iterations: 1_000_000,
        checkpoints: vec![1_000, 1_000_000],
        ..base.clone()
    };
    let cfg = match name {
        "fig1-beta0.9" => linear(0.9),
        "fig1-beta0.99" => linear(0.99),
        "fig2-expo" => ExperimentConfig {
            model: ModelKind::SpeedScalingExp,
            beta: 1.0,
            algorithms: vec![
                AlgoSpec::new(Algorithm::GradLstd),
                AlgoSpec::with_lambda(Algorithm::LstdLambdaAvg, 0.0),
                AlgoSpec::with_lambda(Algorithm::GradLstdLambda, 0.0),
                AlgoSpec::with_lambda(Algorithm::GradLstdLambda, 0.5),
            ],
            iterations: 100_000,
            ..base
        },
        "fig3-geo" => ExperimentConfig {
            model: ModelKind::SpeedScalingGeo,
            beta: 1.0,
            algorithms: geo_algorithms(),
            iterations: 100_000,
            ..base
        },
        "fig4-bellman" => ExperimentConfig {
            model: ModelKind::SpeedScalingGeo,
            beta: 1.0,
            algorithms: geo_algorithms(),
            iterations: 100_000,
            checkpoints: vec![1_000, 10_000, 100_000],
            ..base
        },
        other => {
            return Err(config_err(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
        assert!(preset("fig9").is_err());
    }
}
