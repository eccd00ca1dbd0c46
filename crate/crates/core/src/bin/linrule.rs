use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linrule::experiment::{run, verdict_counts, ExperimentConfig, Stage};
use linrule::rules::RuleSpec;

#[derive(Parser)]
#[command(name = "linrule", version, about = "Bounds and Monte Carlo risk of linear prediction rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bounds at every grid point (bounds.csv).
    Bounds(RunArgs),
    /// Optimal-risk estimators and configured rules (risk.csv).
    McRisk(RunArgs),
    /// Configured rules only (risk.csv).
    RuleRisk(RunArgs),
    /// Verdicts from bounds.csv and risk.csv in the output directory (verdicts.csv).
    Verify(RunArgs),
    /// Everything above in one pass.
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "LINRULE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "LINRULE_WORKERS")]
    workers: Option<usize>,
    /// Covariate law: gaussian, latent or adversarial.
    #[arg(long)]
    law: Option<String>,
    /// Rule to evaluate, e.g. `ridge:lambda=0.1`; repeat to list several. Replaces the config's rules.
    #[arg(long = "rule")]
    rules: Vec<RuleSpec>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Bounds(a) => (Stage::Bounds, a),
        Command::McRisk(a) => (Stage::Risk, a),
        Command::RuleRisk(a) => (Stage::RuleRisk, a),
        Command::Verify(a) => (Stage::Verify, a),
        Command::All(a) => (Stage::All, a),
    };
    match execute(stage, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(stage: Stage, args: RunArgs) -> linrule::Result<bool> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(law) = args.law {
        config.law = law;
    }
    if !args.rules.is_empty() {
        config.rules = args.rules;
    }
    let workers = args
        .workers
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = args.out.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    let summary = run(&config, stage, &out, workers)?;
    for (id, (total, passed)) in verdict_counts(&summary.verdicts) {
        println!("{id:<16} {passed}/{total} passed");
    }
    for v in summary.failures() {
        eprintln!(
            "FAIL {} at d={} n={} alpha={} r={} rho2={} sigma2={} kappa={}: estimate {:.6e}, bound {:.6e}, margin {:.2}",
            v.inequality, v.key.risk.d, v.key.risk.n, v.key.risk.alpha, v.key.risk.r, v.key.risk.rho2,
            v.key.risk.sigma2, v.key.kappa, v.estimate, v.bound, v.margin
        );
    }
    Ok(summary.all_passed())
}
