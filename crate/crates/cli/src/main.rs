//! `gradtd`: run trials, replications, Bellman-error sweeps, oracles and the
//! acceptance checks from the command line.
//!
//! Settings are layered: preset, then config file, then flags. The seed falls
//! back to `GRADTD_SEED` when neither a flag nor the config file sets it.
//! Exit status is 0 on success, 1 on invalid input and 2 when an acceptance
//! check fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gradtd::harness::{
    bellman_sweep, preset, replicate_with_threads, run_trial, summarize, write_outputs, write_trajectory_csv,
    AlgoSpec, ExperimentConfig, ModelKind, Replication, WallStats,
};
use gradtd::oracles::{analytic_linear_theta, mc_fixed_point, FixedPointKind};
use gradtd::verify::{run_criteria, Scale};

#[derive(Parser, Debug)]
#[command(name = "gradtd", version, about = "Differential and classical LSTD policy evaluation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single trial of each configured algorithm.
    Run {
        #[command(flatten)]
        opts: ExperimentArgs,
        /// Trial index; the trial seed is `seed ^ index`.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Run `reps` independent trials and summarize them.
    Replicate {
        #[command(flatten)]
        opts: ExperimentArgs,
    },
    /// Replicate and evaluate the Bellman error of the mean estimates.
    Bellman {
        #[command(flatten)]
        opts: ExperimentArgs,
        /// Checkpoints in T (comma separated); defaults to the config's, else 1e3,1e4,1e5.
        #[arg(long, value_delimiter = ',', value_parser = parse_count)]
        checkpoints: Vec<u64>,
    },
    /// Print reference values.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Run the acceptance checks and report one line per criterion.
    Verify {
        /// Smaller horizons and replication counts.
        #[arg(long)]
        quick: bool,
        /// Run only these criteria (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Closed-form discounted value function of the linear model.
    Linear {
        #[arg(long, default_value_t = 0.7)]
        a: f64,
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_var: f64,
    },
    /// Monte-Carlo fixed point of LSTD(lambda) or its differential analog.
    FixedPoint {
        #[command(flatten)]
        opts: ExperimentArgs,
        #[arg(long, value_enum, default_value_t = Kind::Differential)]
        kind: Kind,
        #[arg(long, default_value = "1e6", value_parser = parse_count)]
        samples: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Standard,
    Differential,
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// linear | speed_scaling_exp | speed_scaling_geo
    #[arg(long)]
    model: Option<String>,
    /// Algorithms, comma separated, each `name` or `name@lambda`.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of estimator updates (accepts e.g. 1e6).
    #[arg(long = "T", value_parser = parse_count)]
    t: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    burn_in: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "gradtd-out")]
    out: PathBuf,
    /// One of fig1-beta0.9, fig1-beta0.99, fig2-expo, fig3-geo, fig4-bellman.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config file, or JSON (a bare object or a summary.json).
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parses a non-negative integer written plainly or in scientific notation.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("'{s}' is not a non-negative integer"))
    }
}

enum Failure {
    Invalid(String),
    Acceptance,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.preset {
            Some(name) => preset(name)?,
            None => ExperimentConfig::default(),
        };
        let mut file_keys = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?;
            let json = path.extension().is_some_and(|e| e == "json");
            let (merged, keys) = cfg.overlay(&text, json)?;
            cfg = merged;
            file_keys = keys;
        }
        if let Some(m) = &self.model {
            cfg.model = m.parse()?;
        }
        if !self.algo.is_empty() {
            cfg.algorithms = self.algo.iter().map(|a| a.parse::<AlgoSpec>()).collect::<Result<_, _>>()?;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(t) = self.t {
            cfg.iterations = t;
            if !cfg.checkpoints.is_empty() {
                cfg.checkpoints.retain(|&c| c < t);
                cfg.checkpoints.push(t);
            }
        }
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        match self.seed {
            Some(s) => cfg.seed = s,
            None if !file_keys.iter().any(|k| k == "seed") => {
                if let Ok(v) = std::env::var("GRADTD_SEED") {
                    cfg.seed = v
                        .trim()
                        .parse()
                        .map_err(|_| Failure::Invalid(format!("GRADTD_SEED='{v}' is not an unsigned integer")))?;
                }
            }
            None => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
                Ok(pool.install(f))
            }
        }
    }
}

fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn print_replication(rep: &Replication) {
    for s in &rep.summaries {
        let coords: Vec<String> = s
            .coordinates
            .iter()
            .map(|c| format!("{} mean {} var {:.3e}", c.name, sig6(c.mean), c.variance))
            .collect();
        println!("{} T={} n={}: {}", s.algorithm, s.t, s.n_trials, coords.join(" | "));
    }
}

fn cmd_run(opts: &ExperimentArgs, trial: u64) -> CliResult {
    let cfg = opts.config()?;
    let mut trials = Vec::new();
    for p in 0..cfg.algorithms.len() {
        trials.push(run_trial(&cfg, p, trial, true)?);
    }
    for r in &trials {
        let e = r.final_estimate();
        let theta: Vec<String> = e.theta.iter().map(|&v| sig6(v)).collect();
        println!(
            "{} trial {} seed {}: theta=({}) kappa={} eta={}{}",
            r.label,
            r.trial_index,
            r.seed,
            theta.join(", "),
            sig6(e.kappa),
            sig6(e.eta),
            if e.rank_deficient { " (rank deficient)" } else { "" }
        );
    }
    let walls: Vec<f64> = trials.iter().map(|r| r.wall_ms).collect();
    let rep = Replication {
        summaries: summarize(&cfg, &trials),
        wall: WallStats {
            mean_ms: walls.iter().sum::<f64>() / walls.len() as f64,
            min_ms: walls.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: walls.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
        trials,
    };
    write_outputs(&opts.out, &cfg, &rep, &[])?;
    write_trajectory_csv(&opts.out.join("trajectory.csv"), &rep.trials)?;
    report_out(&opts.out);
    Ok(())
}

fn report_out(dir: &Path) {
    println!("results written to {}", dir.display());
}

fn cmd_replicate(opts: &ExperimentArgs) -> CliResult {
    let cfg = opts.config()?;
    let rep = replicate_with_threads(&cfg, opts.threads)?;
    print_replication(&rep);
    write_outputs(&opts.out, &cfg, &rep, &[])?;
    report_out(&opts.out);
    Ok(())
}

fn cmd_bellman(opts: &ExperimentArgs, checkpoints: &[u64]) -> CliResult {
    let mut cfg = opts.config()?;
    if cfg.model != ModelKind::SpeedScalingGeo {
        return Err(Failure::Invalid("bellman needs --model speed_scaling_geo".into()));
    }
    let checkpoints = if !checkpoints.is_empty() {
        checkpoints.to_vec()
    } else if !cfg.checkpoints.is_empty() {
        cfg.checkpoints.clone()
    } else {
        vec![1_000, 10_000, 100_000]
    };
    cfg.iterations = cfg.iterations.max(*checkpoints.iter().max().expect("non-empty"));
    cfg.checkpoints = checkpoints.clone();
    cfg.validate()?;
    let (rep, curves) = opts.in_pool(|| bellman_sweep(&cfg, &checkpoints))??;
    print_replication(&rep);
    for c in &curves {
        println!("{} T={}: mean |E_B| = {}", c.algorithm, c.t, sig6(c.curve.mean_abs()));
    }
    write_outputs(&opts.out, &cfg, &rep, &curves)?;
    report_out(&opts.out);
    Ok(())
}

fn cmd_oracle(which: &OracleCommand) -> CliResult {
    match which {
        OracleCommand::Linear { a, beta, noise_var } => {
            let s = analytic_linear_theta(*a, *beta, *noise_var)?;
            println!("θ*=({}, {})", sig6(s.theta1), sig6(s.theta2));
            println!(
                "theta1={:.16e} theta2={:.16e} E[X^2]={:.16e} eta={:.16e}",
                s.theta1, s.theta2, s.pi_second_moment, s.eta
            );
        }
        OracleCommand::FixedPoint { opts, kind, samples } => {
            let cfg = opts.config()?;
            let kind = match kind {
                Kind::Standard => FixedPointKind::Standard,
                Kind::Differential => FixedPointKind::Differential,
            };
            let fp = mc_fixed_point(
                &cfg.model_spec()?,
                &cfg.feature_map(),
                kind,
                cfg.lambda,
                cfg.beta,
                *samples as usize,
                cfg.seed,
            )?;
            let parts: Vec<String> = fp
                .theta
                .iter()
                .zip(&fp.stderr)
                .map(|(t, s)| format!("{} ± {:.2e}", sig6(*t), s))
                .collect();
            println!("θ*(λ={})=({}){}", cfg.lambda, parts.join(", "), if fp.singular { " (singular)" } else { "" });
        }
    }
    Ok(())
}

fn cmd_verify(quick: bool, only: &[u8]) -> CliResult {
    let scale = if quick { Scale::Quick } else { Scale::Full };
    let outcomes = run_criteria(scale, only, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        Err(Failure::Acceptance)
    } else {
        Ok(())
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Run { opts, trial } => cmd_run(opts, *trial),
        Command::Replicate { opts } => cmd_replicate(opts),
        Command::Bellman { opts, checkpoints } => cmd_bellman(opts, checkpoints),
        Command::Oracle { which } => cmd_oracle(which),
        Command::Verify { quick, only } => cmd_verify(*quick, only),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Acceptance) => ExitCode::from(2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("250"), Ok(250));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(16.100178890876567), "16.1002");
        assert_eq!(sig6(1.7889087656529514), "1.78891");
        assert_eq!(sig6(192.27034375606897), "192.270");
    }
}
