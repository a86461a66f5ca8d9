//! Command-line entry point: scenario simulation, controller comparison,
//! safety-curve diagnostics, acceptance-test validation, and feeder
//! generation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voltflex::grid::{generate_feeder, save_feeder, Bases, FeederShape, SynthFeederSpec};
use voltflex::harness::{
    self, representative_observation, run_scenario, write_curve_csv, write_plot_csv,
    write_results_jsonl, write_summary_csv, ControllerKind, HarnessError, ScenarioConfig,
    ScenarioEnv, SummaryRow,
};
use voltflex::stream::StreamKey;
use voltflex::utility::{estimate_safety_curve, theorem1_acceptance_study, SafetyConfig};

const OUT_DIR_ENV: &str = "VOLTFLEX_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "voltflex",
    about = "Network-safe TCL fleet coordination simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args)]
struct OutDirArg {
    /// Output directory (falls back to $VOLTFLEX_OUT_DIR, then ".")
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutDirArg {
    fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write results.jsonl, summary.csv, plot.csv
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Run tracking, OPF, and proposed (eps = 0.05, 0.02) controllers over a
    /// seed list; write a comparison table
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Fail (exit 1) if the expected RMSE/safety orderings do not hold
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Monte-Carlo safety-probability curve over a command grid
    SafetyCurve {
        #[arg(long)]
        config: PathBuf,
        /// Number of evenly spaced command points in [-1, 1]
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Realizations per point
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        /// Hour at which the representative observation is taken
        #[arg(long)]
        at_hour: Option<f64>,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Statistical soundness study of the acceptance test against a
    /// synthetic Bernoulli stream with known success probability
    ValidateTheorem1 {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        beta: f64,
        /// True success probability of the synthetic stream
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 100_000)]
        max_samples: u64,
        #[arg(long, default_value_t = 2_000)]
        batch_size: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        out: OutDirArg,
    },
    /// Generate a synthetic radial feeder file
    GenFeeder {
        #[arg(long, default_value_t = 8)]
        nodes: usize,
        #[arg(long, value_enum, default_value_t = CliShape::ChainWithBranches)]
        shape: CliShape,
        #[arg(long, default_value_t = 0.004)]
        r_lo: f64,
        #[arg(long, default_value_t = 0.012)]
        r_hi: f64,
        #[arg(long, default_value_t = 0.003)]
        x_lo: f64,
        #[arg(long, default_value_t = 0.009)]
        x_hi: f64,
        #[arg(long, default_value_t = 1.0)]
        v0: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file path
        #[arg(long)]
        out_file: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum CliShape {
    Chain,
    Star,
    BinaryTree,
    ChainWithBranches,
}

impl From<CliShape> for FeederShape {
    fn from(s: CliShape) -> Self {
        match s {
            CliShape::Chain => FeederShape::Chain,
            CliShape::Star => FeederShape::Star,
            CliShape::BinaryTree => FeederShape::BinaryTree,
            CliShape::ChainWithBranches => FeederShape::ChainWithBranches,
        }
    }
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_)
            | HarnessError::Grid(_)
            | HarnessError::Tcl(_)
            | HarnessError::Aggregator(_)
            | HarnessError::Utility(_)
            | HarnessError::Json(_) => CliError::Config(e.to_string()),
            HarnessError::Io(_) | HarnessError::Csv(_) => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::from_file(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            // validate the whole scenario before creating any outputs
            let env = ScenarioEnv::build(&cfg)?;
            let result = harness::run_in_env(env).map_err(|e| CliError::Runtime(e.to_string()))?;
            let dir = out.resolve();
            ensure_out_dir(&dir)?;
            write_results_jsonl(&dir.join("results.jsonl"), &result.records)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_plot_csv(&dir.join("plot.csv"), &result.records)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let row = SummaryRow {
                controller: result.controller.clone(),
                seeds: 1,
                steps: result.summary.steps,
                rmse_kw: result.summary.rmse_kw,
                safety_probability: result.summary.safety_probability,
                violation_count: result.summary.violation_count,
            };
            write_summary_csv(&dir.join("summary.csv"), &[row])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "{}: rmse {:.3} kW, safety {:.4}, {} violations over {} steps",
                result.controller,
                result.summary.rmse_kw,
                result.summary.safety_probability,
                result.summary.violation_count,
                result.summary.steps
            );
            Ok(())
        }
        Command::Compare {
            config,
            seeds,
            check,
            out,
        } => {
            if seeds.is_empty() {
                return Err(CliError::Config("seed list is empty".into()));
            }
            let base = load_config(&config)?;
            let rows = run_comparison(&base, &seeds)?;
            let dir = out.resolve();
            ensure_out_dir(&dir)?;
            write_summary_csv(&dir.join("comparison.csv"), &rows)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for r in &rows {
                println!(
                    "{:<16} rmse {:.3} kW  safety {:.4}  violations {}",
                    r.controller, r.rmse_kw, r.safety_probability, r.violation_count
                );
            }
            if check {
                check_orderings(&rows).map_err(CliError::Runtime)?;
                println!("orderings ok");
            }
            Ok(())
        }
        Command::SafetyCurve {
            config,
            points,
            samples,
            at_hour,
            out,
        } => {
            if points < 2 {
                return Err(CliError::Config("need at least 2 curve points".into()));
            }
            let cfg = load_config(&config)?;
            let env = ScenarioEnv::build(&cfg)?;
            let hour = at_hour.unwrap_or(cfg.start_hour);
            let obs = representative_observation(&env, hour);
            let grid: Vec<f64> = (0..points)
                .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
                .collect();
            let curve = estimate_safety_curve(
                &obs,
                &env.load,
                &cfg.safety,
                &env.feeder,
                &grid,
                samples,
                StreamKey::new(cfg.seed).child(0x5afe),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let dir = out.resolve();
            ensure_out_dir(&dir)?;
            write_curve_csv(&dir.join("safety_curve.csv"), &curve)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {} curve points", curve.len());
            Ok(())
        }
        Command::ValidateTheorem1 {
            epsilon,
            beta,
            nu,
            trials,
            max_samples,
            batch_size,
            seed,
            out,
        } => {
            if trials == 0 {
                return Err(CliError::Config("trials must be positive".into()));
            }
            let config = SafetyConfig {
                epsilon,
                beta,
                max_samples,
                batch_size,
                ..SafetyConfig::default()
            };
            config
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let study = theorem1_acceptance_study(nu, &config, trials, StreamKey::new(seed));
            let dir = out.resolve();
            ensure_out_dir(&dir)?;
            let report = serde_json::json!({
                "nu_true": study.nu_true,
                "epsilon": epsilon,
                "beta": beta,
                "trials": study.trials,
                "accepted": study.accepted,
                "acceptance_rate": study.acceptance_rate,
                "mean_samples": study.mean_samples,
                "min_accept_samples": study.min_accept_samples,
            });
            std::fs::write(
                dir.join("theorem1_report.json"),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "nu={nu}: accepted {}/{} ({:.4})",
                study.accepted, study.trials, study.acceptance_rate
            );
            Ok(())
        }
        Command::GenFeeder {
            nodes,
            shape,
            r_lo,
            r_hi,
            x_lo,
            x_hi,
            v0,
            seed,
            out_file,
        } => {
            if nodes == 0 || r_lo <= 0.0 || x_lo <= 0.0 || r_hi < r_lo || x_hi < x_lo {
                return Err(CliError::Config(
                    "invalid feeder generation parameters".into(),
                ));
            }
            let spec = SynthFeederSpec {
                shape: shape.into(),
                nodes,
                r_range: (r_lo, r_hi),
                x_range: (x_lo, x_hi),
                v0,
                bases: Bases::default(),
            };
            let feeder = generate_feeder(&spec, StreamKey::new(seed));
            if let Some(parent) = out_file.parent() {
                if !parent.as_os_str().is_empty() {
                    ensure_out_dir(parent)?;
                }
            }
            save_feeder(&feeder, &out_file).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {}", out_file.display());
            Ok(())
        }
    }
}

fn run_comparison(base: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<SummaryRow>, CliError> {
    let variants: Vec<(String, ScenarioConfig)> = {
        let mut proposed_05 = base.with_controller(ControllerKind::Proposed);
        proposed_05.safety.epsilon = 0.05;
        let mut proposed_02 = base.with_controller(ControllerKind::Proposed);
        proposed_02.safety.epsilon = 0.02;
        vec![
            (
                "tracking".into(),
                base.with_controller(ControllerKind::Tracking),
            ),
            (
                "opf".into(),
                base.with_controller(ControllerKind::OpfBenchmark),
            ),
            ("proposed-eps0.05".into(), proposed_05),
            ("proposed-eps0.02".into(), proposed_02),
        ]
    };
    let mut rows = Vec::new();
    for (label, cfg) in variants {
        let mut sq_err_sum = 0.0;
        let mut steps = 0usize;
        let mut safe = 0u64;
        for &seed in seeds {
            let result = run_scenario(&cfg.with_seed(seed))?;
            for r in &result.records {
                sq_err_sum += (r.p_agg_kw - r.p_ref_kw).powi(2);
                safe += r.safe as u64;
            }
            steps += result.records.len();
        }
        rows.push(SummaryRow {
            controller: label,
            seeds: seeds.len(),
            steps,
            rmse_kw: (sq_err_sum / steps as f64).sqrt(),
            safety_probability: safe as f64 / steps as f64,
            violation_count: steps as u64 - safe,
        });
    }
    Ok(rows)
}

fn check_orderings(rows: &[SummaryRow]) -> Result<(), String> {
    let get = |name: &str| {
        rows.iter()
            .find(|r| r.controller == name)
            .ok_or_else(|| format!("missing controller row {name}"))
    };
    let tracking = get("tracking")?;
    let opf = get("opf")?;
    let p05 = get("proposed-eps0.05")?;
    let p02 = get("proposed-eps0.02")?;
    let mut failures = Vec::new();
    if !(tracking.rmse_kw <= p05.rmse_kw) {
        failures.push("rmse(tracking) <= rmse(proposed eps=0.05)".to_string());
    }
    if !(p05.rmse_kw <= p02.rmse_kw) {
        failures.push("rmse(proposed eps=0.05) <= rmse(proposed eps=0.02)".to_string());
    }
    if !(p02.rmse_kw <= opf.rmse_kw) {
        failures.push("rmse(proposed eps=0.02) <= rmse(opf)".to_string());
    }
    if !(tracking.safety_probability < p05.safety_probability) {
        failures.push("safety(tracking) < safety(proposed eps=0.05)".to_string());
    }
    if !(p05.safety_probability <= opf.safety_probability) {
        failures.push("safety(proposed) <= safety(opf)".to_string());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(format!("ordering checks failed: {}", failures.join("; ")))
    }
}
