use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde_json::json;

use oqns_core::experiment::config::Mode;
use oqns_core::experiment::{execute, verify_bounds, write_artifacts, ExperimentConfig, LearnerKind, RunSummary};
use oqns_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_BOUND_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "oqns", version, about = "Run and check online quasi-Newton experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online regret run.
    RunOnline(RunArgs),
    /// Stochastic run; the horizon is derived from `epsilon`.
    RunStochastic(RunArgs),
    /// Run the quasi-Newton learner, ONS and projected OGD on the same configuration.
    CompareBaselines(RunArgs),
    /// Check a finished run's telemetry against the closed-form bounds.
    VerifyBounds {
        /// Directory written by a previous run.
        run_dir: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set learner.eta=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed to run; repeat for several. Replaces the configured list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory. Defaults to the configured one, else `runs/<learner>-<time>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Error(Error),
    Bounds,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load(args: &RunArgs, mode: Option<Mode>) -> Result<ExperimentConfig, Error> {
    let mut overrides = args.overrides.clone();
    if let Some(mode) = mode {
        let name = match mode {
            Mode::Online => "online",
            Mode::Stochastic => "stochastic",
        };
        overrides.push(format!("mode={name}"));
    }
    if !args.seeds.is_empty() {
        let list: Vec<String> = args.seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    let mut cfg = ExperimentConfig::load(&args.config, &overrides)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run_one(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, Error> {
    let resolved = cfg.resolve()?;
    let (summary, runs) = execute(&resolved)?;
    write_artifacts(dir, &summary, &runs)?;
    Ok(summary)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| oqns_core::experiment::run::default_output_dir(cfg.learner.kind))
}

fn report(summary: &RunSummary, dir: &Path) -> serde_json::Value {
    let mut v = json!({
        "output_dir": dir.display().to_string(),
        "learner": summary.learner,
        "horizon": summary.horizon,
        "seeds": summary.seeds.len(),
        "mean_final_regret": summary.mean_final_regret,
        "mean_final_surrogate_regret": summary.mean_final_surrogate_regret,
    });
    if let Some(s) = &summary.stochastic {
        v["excess_risk_mean"] = json!(s.excess_risk_mean);
        v["excess_risk_std_error"] = json!(s.excess_risk_std_error);
    }
    v
}

fn run_single(args: &RunArgs, mode: Mode) -> Result<(), Error> {
    let cfg = load(args, Some(mode))?;
    let dir = output_dir(&cfg);
    let summary = run_one(&cfg, &dir)?;
    println!("{}", report(&summary, &dir));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::RunOnline(args) => run_single(&args, Mode::Online)?,
        Command::RunStochastic(args) => run_single(&args, Mode::Stochastic)?,
        Command::CompareBaselines(args) => {
            let base = load(&args, None)?;
            base.resolve()?;
            let dir = output_dir(&base);
            let mut rows = Vec::new();
            for kind in [LearnerKind::Oqns, LearnerKind::Ons, LearnerKind::Ogd] {
                let mut cfg = base.clone();
                cfg.learner.kind = kind;
                if kind != LearnerKind::Oqns {
                    // Step constants of the baselines follow from alpha and the gradient bound.
                    cfg.learner.grad_bound = None;
                }
                let resolved = match cfg.resolve() {
                    Ok(r) => r,
                    Err(e) => {
                        warn!("skipping {}: {e}", kind.name());
                        continue;
                    }
                };
                let sub = dir.join(kind.name());
                let (summary, runs) = execute(&resolved)?;
                write_artifacts(&sub, &summary, &runs)?;
                let n = summary.seeds.len() as f64;
                rows.push(json!({
                    "learner": kind.name(),
                    "output_dir": sub.display().to_string(),
                    "mean_final_regret": summary.mean_final_regret,
                    "mean_final_surrogate_regret": summary.mean_final_surrogate_regret,
                    "mean_wall_nanos_per_round": summary.seeds.iter().map(|s| s.wall_nanos_per_round).sum::<f64>() / n,
                    "mean_inversions": summary.seeds.iter().map(|s| s.inversions as f64).sum::<f64>() / n,
                }));
            }
            let comparison = json!({ "schema_version": 1, "learners": rows });
            let text = serde_json::to_string_pretty(&comparison).expect("json");
            std::fs::write(dir.join("comparison.json"), text.clone() + "\n").map_err(Error::from)?;
            println!("{text}");
        }
        Command::VerifyBounds { run_dir, json } => {
            let report = verify_bounds(&run_dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            } else {
                print!("{report}");
            }
            if !report.passed() {
                for f in report.failures() {
                    eprintln!("bound `{}` violated for seed {}: {} > {}", f.bound, f.seed, f.lhs, f.rhs);
                }
                return Err(Failure::Bounds);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Bounds) => ExitCode::from(EXIT_BOUND_FAILURE),
        Err(Failure::Error(e)) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
