//! Experiment configuration: a flat, TOML-compatible record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::estimators::{Algorithm, EstimatorConfig};
use crate::models::{FeatureMap, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `X(t+1) = a X(t) + N(t+1)` with Gaussian noise and cost `x^2`.
    Linear,
    /// Speed-scaling queue with exponential arrivals.
    #[serde(alias = "exponential", alias = "speed_scaling_exponential")]
    SpeedScalingExp,
    /// Speed-scaling queue with geometric arrivals on a lattice.
    #[serde(alias = "geometric", alias = "speed_scaling_geometric")]
    SpeedScalingGeo,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::SpeedScalingExp => "speed_scaling_exp",
            ModelKind::SpeedScalingGeo => "speed_scaling_geo",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" => Ok(ModelKind::Linear),
            "speed_scaling_exp" | "speed_scaling_exponential" | "exponential" => Ok(ModelKind::SpeedScalingExp),
            "speed_scaling_geo" | "speed_scaling_geometric" | "geometric" => Ok(ModelKind::SpeedScalingGeo),
            _ => Err(config_err(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `psi(x) = (1, x^2)`.
    Quadratic,
    /// `psi(x) = (x^{3/2}, x)`.
    SpeedScaling,
}

impl FeatureKind {
    pub fn map(self) -> FeatureMap {
        match self {
            FeatureKind::Quadratic => FeatureMap::quadratic(),
            FeatureKind::SpeedScaling => FeatureMap::speed_scaling(),
        }
    }
}

/// An algorithm with an optional per-entry lambda, written `name` or
/// `name@lambda` (e.g. `grad_lstd_lambda@0.5`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AlgoSpec {
    pub algorithm: Algorithm,
    pub lambda: Option<f64>,
}

impl AlgoSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self { algorithm, lambda: None }
    }

    pub fn with_lambda(algorithm: Algorithm, lambda: f64) -> Self {
        Self {
            algorithm,
            lambda: Some(lambda),
        }
    }

    /// Lambda used for this entry; algorithms without a trace parameter get 0.
    pub fn effective_lambda(&self, default: f64) -> f64 {
        if self.algorithm.uses_lambda() {
            self.lambda.unwrap_or(default)
        } else {
            0.0
        }
    }

    /// Label including the effective lambda, used in output files.
    pub fn label(&self, default: f64) -> String {
        if self.algorithm.uses_lambda() {
            format!("{}@{}", self.algorithm, self.effective_lambda(default))
        } else {
            self.algorithm.to_string()
        }
    }
}

impl fmt::Display for AlgoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lambda {
            Some(l) => write!(f, "{}@{}", self.algorithm, l),
            None => write!(f, "{}", self.algorithm),
        }
    }
}

impl FromStr for AlgoSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('@') {
            None => Ok(Self::new(s.parse()?)),
            Some((name, l)) => {
                let lambda: f64 = l
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("bad lambda in '{s}'")))?;
                Ok(Self::with_lambda(name.parse()?, lambda))
            }
        }
    }
}

impl TryFrom<String> for AlgoSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlgoSpec> for String {
    fn from(a: AlgoSpec) -> String {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Linear model coefficient.
    pub a: f64,
    /// Linear model noise variance.
    pub noise_var: f64,
    /// Speed-scaling policy parameter.
    pub epsilon: f64,
    /// Geometric arrival success probability.
    pub p_arrival: f64,
    /// Geometric arrival lattice step.
    pub delta: f64,
    pub cost_scale: f64,
    /// Basis; `None` picks the model's standard basis.
    pub features: Option<FeatureKind>,
    pub algorithms: Vec<AlgoSpec>,
    /// Lambda for entries of `algorithms` written without `@lambda`.
    pub lambda: f64,
    pub beta: f64,
    /// Number of estimator updates `T`, counted after burn-in.
    pub iterations: u64,
    pub burn_in: u64,
    pub reps: u64,
    pub seed: u64,
    pub bins: usize,
    pub cadence: u64,
    pub init_scale: f64,
    /// Share one noise stream across algorithms within a trial.
    pub common_random_numbers: bool,
    /// Times at which each trial is finalized; empty means `[iterations]`.
    pub checkpoints: Vec<u64>,
    /// Upper end of the Bellman-error grid.
    pub bellman_max_x: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            a: 0.7,
            noise_var: 1.0,
            epsilon: 0.5,
            p_arrival: 0.04,
            delta: 1.0 / 24.0,
            cost_scale: 1.0,
            features: None,
            algorithms: vec![AlgoSpec::new(Algorithm::GradLstd)],
            lambda: 0.0,
            beta: 0.9,
            iterations: 1_000,
            burn_in: 1_000,
            reps: 1,
            seed: 0,
            bins: 50,
            cadence: 100,
            init_scale: 1e-3,
            common_random_numbers: false,
            checkpoints: Vec::new(),
            bellman_max_x: 20.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Overlays the keys set in a config file onto `self` and returns the
    /// result with the list of keys the file set. JSON input may be a bare
    /// object or a `summary.json` carrying the config under `"config"`.
    pub fn overlay(&self, text: &str, json: bool) -> Result<(Self, Vec<String>)> {
        let file: serde_json::Value = if json {
            let mut v: serde_json::Value = serde_json::from_str(text)?;
            match v.get_mut("config") {
                Some(inner) => inner.take(),
                None => v,
            }
        } else {
            serde_json::to_value(toml::from_str::<toml::Table>(text)?)?
        };
        let serde_json::Value::Object(file) = file else {
            return Err(config_err("config file must contain a table of settings"));
        };
        let mut merged = match serde_json::to_value(self)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let keys: Vec<String> = file.keys().cloned().collect();
        merged.extend(file);
        Ok((serde_json::from_value(serde_json::Value::Object(merged))?, keys))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = match self.model {
            ModelKind::Linear => ModelSpec::linear(self.a, self.noise_var, self.beta)?,
            ModelKind::SpeedScalingExp => ModelSpec::speed_scaling_exponential(self.epsilon, self.beta)?,
            ModelKind::SpeedScalingGeo => {
                ModelSpec::speed_scaling_geometric(self.epsilon, self.delta, self.p_arrival, self.beta)?
            }
        };
        let spec = spec.with_cost_scale(self.cost_scale);
        spec.validate()?;
        Ok(spec)
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.features.unwrap_or(match self.model {
            ModelKind::Linear => FeatureKind::Quadratic,
            _ => FeatureKind::SpeedScaling,
        })
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_kind().map()
    }

    pub fn estimator_config(&self, algo: &AlgoSpec) -> EstimatorConfig {
        let mut c = EstimatorConfig::new(
            algo.algorithm,
            self.beta,
            algo.effective_lambda(self.lambda),
            self.feature_map().constant_mask(),
        );
        c.init_scale = self.init_scale;
        c.cadence = self.cadence;
        c
    }

    /// Checkpoints in increasing order, defaulting to the final time.
    pub fn effective_checkpoints(&self) -> Vec<u64> {
        let mut c = if self.checkpoints.is_empty() {
            vec![self.iterations]
        } else {
            self.checkpoints.clone()
        };
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Noise stream for entry `position` of `algorithms`. Repeated algorithms
    /// (e.g. two lambdas) get distinct streams.
    pub fn stream_for(&self, position: usize) -> u64 {
        if self.common_random_numbers {
            return 0;
        }
        let algo = self.algorithms[position].algorithm;
        let repeats = self.algorithms[..position]
            .iter()
            .filter(|a| a.algorithm == algo)
            .count() as u64;
        algo.stream_id() + 16 * repeats
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(config_err("iterations (T) must be at least 1"));
        }
        if self.reps == 0 {
            return Err(config_err("reps must be at least 1"));
        }
        if self.bins == 0 {
            return Err(config_err("bins must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(config_err("at least one algorithm is required"));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.iterations) {
            return Err(config_err(format!("checkpoint {c} must lie in [1, T = {}]", self.iterations)));
        }
        if !(self.bellman_max_x > 0.0) {
            return Err(config_err("bellman_max_x must be positive"));
        }
        let model = self.model_spec()?;
        if self.feature_kind() == FeatureKind::SpeedScaling && !model.is_queue() {
            return Err(config_err("speed_scaling features need a queue model (x >= 0)"));
        }
        for algo in &self.algorithms {
            if let Some(l) = algo.lambda {
                if !algo.algorithm.uses_lambda() {
                    return Err(config_err(format!("{} takes no lambda (got {l})", algo.algorithm)));
                }
            }
            if algo.algorithm.requires_regeneration() && !model.has_regeneration() {
                return Err(config_err(format!(
                    "{} needs the geometric-arrival queue, which regenerates at 0",
                    algo.algorithm
                )));
            }
            self.estimator_config(algo)
                .validate()
                .map_err(|e| config_err(format!("{algo}: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_spec_round_trips() {
        for s in ["grad_lstd", "grad_lstd_lambda@0.5", "lstd_lambda_avg@0"] {
            let a: AlgoSpec = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert!("grad_lstd@x".parse::<AlgoSpec>().is_err());
        assert!("nope".parse::<AlgoSpec>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.algorithms = vec!["lstd".parse().unwrap(), "grad_lstd_lambda@0.5".parse().unwrap()];
        c.delta = 1.0 / 24.0;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flat_toml_with_defaults() {
        let c = ExperimentConfig::from_toml_str("model = \"speed_scaling_geo\"\nbeta = 1.0\nalgorithms = [\"regen_lstd\"]\n")
            .unwrap();
        assert_eq!(c.model, ModelKind::SpeedScalingGeo);
        assert_eq!(c.bins, 50);
        c.validate().unwrap();
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn overlay_keeps_unset_keys() {
        let base = ExperimentConfig {
            reps: 7,
            ..Default::default()
        };
        let (c, keys) = base.overlay("beta = 0.99\niterations = 5000\n", false).unwrap();
        assert_eq!((c.beta, c.iterations, c.reps), (0.99, 5000, 7));
        assert_eq!(keys, vec!["beta".to_string(), "iterations".to_string()]);
        let echoed = format!("{{\"config\": {}}}", serde_json::to_string(&c).unwrap());
        assert_eq!(ExperimentConfig::default().overlay(&echoed, true).unwrap().0, c);
        assert!(base.overlay("nonsense = 3", false).is_err());
    }

    #[test]
    fn incompatible_pairings_are_rejected() {
        let mut c = ExperimentConfig {
            model: ModelKind::SpeedScalingExp,
            beta: 1.0,
            algorithms: vec![AlgoSpec::new(Algorithm::RegenLstd)],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.model = ModelKind::SpeedScalingGeo;
        c.validate().unwrap();
        c.beta = 0.9;
        assert!(c.validate().is_err());

        let mut lin = ExperimentConfig {
            algorithms: vec![AlgoSpec::new(Algorithm::Lstd)],
            beta: 1.0,
            ..Default::default()
        };
        assert!(lin.validate().is_err());
        lin.beta = 0.9;
        lin.features = Some(FeatureKind::SpeedScaling);
        assert!(lin.validate().is_err());
        lin.features = None;
        lin.checkpoints = vec![0];
        assert!(lin.validate().is_err());
        lin.checkpoints = vec![];
        lin.algorithms = vec![AlgoSpec::with_lambda(Algorithm::Lstd, 0.5)];
        assert!(lin.validate().is_err());
    }

    #[test]
    fn repeated_algorithms_get_distinct_streams() {
        let mut c = ExperimentConfig {
            algorithms: vec![
                "grad_lstd_lambda@0".parse().unwrap(),
                "grad_lstd".parse().unwrap(),
                "grad_lstd_lambda@0.5".parse().unwrap(),
            ],
            ..Default::default()
        };
        let s: Vec<u64> = (0..3).map(|i| c.stream_for(i)).collect();
        assert_eq!(s, vec![4, 2, 20]);
        c.common_random_numbers = true;
        assert_eq!(c.stream_for(2), 0);
    }
}
