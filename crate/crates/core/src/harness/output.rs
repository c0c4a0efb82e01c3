//! Result files: `summary.json`, `estimates.csv`, `timings.csv`,
//! `bellman.csv` and, for single runs, `trajectory.csv`.
//!
//! Floating-point results are written with 17 significant digits. Wall-clock
//! times live in `timings.csv` so that `estimates.csv` is reproducible
//! byte for byte.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Map, Number, Value};

use crate::error::Result;

use super::{AlgorithmSummary, BellmanRecord, ExperimentConfig, Replication, TrialResult};

/// `x` with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&format_f64(x)).expect("formatted float is a JSON number"))
    } else {
        Value::Null
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn summary_json(s: &AlgorithmSummary) -> Value {
    let coords: Vec<Value> = s
        .coordinates
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "mean": num(c.mean),
                "variance": num(c.variance),
                "min": num(c.min),
                "max": num(c.max),
                "histogram": { "edges": nums(&c.histogram.edges), "counts": c.histogram.counts },
            })
        })
        .collect();
    json!({
        "algorithm": s.algorithm,
        "lambda": num(s.lambda),
        "t": s.t,
        "n_trials": s.n_trials,
        "rank_deficient": s.rank_deficient,
        "coordinates": coords,
    })
}

fn bellman_json(b: &BellmanRecord) -> Value {
    json!({
        "algorithm": b.algorithm,
        "t": b.t,
        "eta_t": num(b.curve.eta_t),
        "theta": nums(&b.curve.theta_used),
        "mean_abs_error": num(b.curve.mean_abs()),
    })
}

fn theta_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("theta_{j}")).collect()
}

/// One row per (algorithm, checkpoint, trial).
pub fn write_estimates_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = trials
        .first()
        .map_or(0, |r| r.final_estimate().theta.len());
    let mut header = vec!["algorithm".to_string(), "lambda".into(), "t".into(), "trial_index".into(), "seed".into()];
    header.extend(theta_header(d));
    header.extend(["kappa".into(), "eta".into(), "rank_deficient".into()]);
    w.write_record(&header)?;
    for r in trials {
        for (t, e) in &r.estimates {
            let mut row = vec![
                r.label.clone(),
                format_f64(r.lambda),
                t.to_string(),
                r.trial_index.to_string(),
                r.seed.to_string(),
            ];
            row.extend(e.theta.iter().map(|&v| format_f64(v)));
            row.extend([format_f64(e.kappa), format_f64(e.eta), e.rank_deficient.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The finalization trajectory of each trial at the configured cadence.
pub fn write_trajectory_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = trials
        .first()
        .map_or(0, |r| r.final_estimate().theta.len());
    let mut header = vec!["algorithm".to_string(), "trial_index".into(), "t".into()];
    header.extend(theta_header(d));
    header.extend(["kappa".into(), "eta".into()]);
    w.write_record(&header)?;
    for r in trials {
        for (t, e) in &r.trajectory {
            let mut row = vec![r.label.clone(), r.trial_index.to_string(), t.to_string()];
            row.extend(e.theta.iter().map(|&v| format_f64(v)));
            row.extend([format_f64(e.kappa), format_f64(e.eta)]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_timings_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "trial_index", "seed", "wall_ms"])?;
    for r in trials {
        w.write_record([
            r.label.clone(),
            r.trial_index.to_string(),
            r.seed.to_string(),
            format_f64(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_bellman_csv(path: &Path, records: &[BellmanRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "T", "x", "E_B"])?;
    for b in records {
        for (x, e) in b.curve.grid.iter().zip(&b.curve.values) {
            w.write_record([b.algorithm.clone(), b.t.to_string(), format_f64(*x), format_f64(*e)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes all result files of a replication into `dir` (created if needed).
/// `bellman.csv` is written only when `bellman` is non-empty.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    rep: &Replication,
    bellman: &[BellmanRecord],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut root = Map::new();
    root.insert("config".into(), serde_json::to_value(config)?);
    root.insert(
        "summaries".into(),
        Value::Array(rep.summaries.iter().map(summary_json).collect()),
    );
    root.insert(
        "wall_ms".into(),
        json!({ "mean": num(rep.wall.mean_ms), "min": num(rep.wall.min_ms), "max": num(rep.wall.max_ms) }),
    );
    if !bellman.is_empty() {
        root.insert("bellman".into(), Value::Array(bellman.iter().map(bellman_json).collect()));
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&Value::Object(root))? + "\n")?;
    write_estimates_csv(&dir.join("estimates.csv"), &rep.trials)?;
    write_timings_csv(&dir.join("timings.csv"), &rep.trials)?;
    if !bellman.is_empty() {
        write_bellman_csv(&dir.join("bellman.csv"), bellman)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(1.0 / 3.0), "3.3333333333333331e-1");
        let back: f64 = format_f64(0.1 + 0.2).parse().unwrap();
        assert_eq!(back, 0.1 + 0.2);
        assert_eq!(num(0.5).to_string(), "5.0000000000000000e-1");
        assert_eq!(num(f64::NAN), Value::Null);
    }
}
