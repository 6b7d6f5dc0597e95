//! Command-line front end: seeded batch experiments, instance generation,
//! and re-running the audit checks on a finished run directory.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use voql::env::{gen_linear_mdp, gen_tabular_mdp};
use voql::harness::{run_experiment, verify_run_dir, Algo, ExperimentConfig};
use voql::learner::BonusOracle;

#[derive(Parser)]
#[command(
    name = "voql",
    about = "Variance-weighted optimistic Q-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch experiment from a JSON config, with flag overrides.
    Run(RunArgs),
    /// Generate an instance file.
    GenEnv(GenEnvArgs),
    /// Re-run the audit checks on a run directory that has logs.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode budget.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the algorithm: voql | lsvi-ucb | uniform-random.
    #[arg(long)]
    algo: Option<String>,
    /// Override the bonus oracle: vs | elliptical | subsample.
    #[arg(long)]
    oracle: Option<String>,
    /// Override the global radius/threshold multiplier.
    #[arg(long)]
    scale: Option<f64>,
    /// Override the switching-threshold constant.
    #[arg(long)]
    c_u: Option<f64>,
    /// Override the sensitivity-sampling constant.
    #[arg(long)]
    c_sens: Option<f64>,
    /// Enable the per-run invariant audits (writes logs and reports).
    #[arg(long)]
    check_invariants: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 2 when any audit exceeds the 5% violation budget.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct GenEnvArgs {
    /// Instance kind: linear | tabular.
    #[arg(long, default_value = "linear")]
    kind: String,
    /// Feature dimension (linear only).
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, visible_alias = "H", default_value_t = 4)]
    horizon: usize,
    #[arg(long, default_value_t = 6)]
    nx: usize,
    #[arg(long, default_value_t = 3)]
    na: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run directory containing instance.json and log_<seed>.json files.
    #[arg(long)]
    run: PathBuf,
    /// Exit with code 2 when any check exceeds the 5% violation budget.
    #[arg(long)]
    strict: bool,
}

const VIOLATION_BUDGET: f64 = 0.05;

fn parse_algo(s: &str) -> Result<Algo, String> {
    match s {
        "voql" => Ok(Algo::Voql),
        "lsvi-ucb" => Ok(Algo::LsviUcb),
        "uniform-random" => Ok(Algo::UniformRandom),
        other => Err(format!("unknown algo '{other}'")),
    }
}

fn parse_oracle(s: &str) -> Result<BonusOracle, String> {
    match s {
        "vs" | "version-space" => Ok(BonusOracle::VersionSpace),
        "elliptical" => Ok(BonusOracle::Elliptical),
        "subsample" => Ok(BonusOracle::Subsample),
        other => Err(format!("unknown oracle '{other}'")),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("reading {}: {e}", args.config.display()))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| format!("parsing config: {e}"))?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(t) = args.episodes {
        config.episodes = t;
    }
    if let Some(algo) = &args.algo {
        config.algo = parse_algo(algo)?;
    }
    if let Some(oracle) = &args.oracle {
        config.oracle = parse_oracle(oracle)?;
    }
    if let Some(scale) = args.scale {
        config.params.c_scale = scale;
    }
    if let Some(c_u) = args.c_u {
        config.params.c_u = c_u;
    }
    if let Some(c_sens) = args.c_sens {
        config.params.c_sens = c_sens;
    }
    if args.check_invariants {
        config.check_invariants = true;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    let summary = run_experiment(&config).map_err(|e| e.to_string())?;
    println!(
        "{} seeds, mean final cumulative regret {:.4}",
        summary.seeds.len(),
        summary.mean_final_cum_regret
    );
    if let Some(p) = summary.mean_regret_exponent {
        println!("mean fitted regret exponent {p:.3}");
    }
    let mut breached = false;
    for seed in &summary.seeds {
        for report in &seed.violation_reports {
            let rate = report.rate();
            println!(
                "seed {} {}: {}/{} violations (rate {:.4})",
                seed.seed, report.check, report.violations, report.total, rate
            );
            if rate > VIOLATION_BUDGET {
                breached = true;
            }
        }
    }
    if args.strict && breached {
        eprintln!("invariant budget breached");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_env(args: GenEnvArgs) -> Result<ExitCode, String> {
    let mdp = match args.kind.as_str() {
        "linear" => gen_linear_mdp(args.d, args.horizon, args.nx, args.na, args.seed),
        "tabular" => gen_tabular_mdp(args.horizon, args.nx, args.na, args.seed),
        other => return Err(format!("unknown env kind '{other}'")),
    }
    .map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&mdp).map_err(|e| e.to_string())?;
    std::fs::write(&args.out, json).map_err(|e| e.to_string())?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, String> {
    let all = verify_run_dir(&args.run).map_err(|e| e.to_string())?;
    if all.is_empty() {
        return Err("no log_<seed>.json files found (run with --check-invariants)".into());
    }
    let mut breached = false;
    for (i, reports) in all.iter().enumerate() {
        for report in reports {
            let rate = report.rate();
            println!(
                "log {} {}: {}/{} violations (rate {:.4}, worst slack {:.3e})",
                i, report.check, report.violations, report.total, rate, report.worst_slack
            );
            if rate > VIOLATION_BUDGET {
                breached = true;
            }
        }
    }
    if args.strict && breached {
        eprintln!("invariant budget breached");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GenEnv(args) => cmd_gen_env(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
