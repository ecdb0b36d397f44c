use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use cfuq::config::SplitKind;
use cfuq::report::{read_report, recompute};
use cfuq::{run_experiment, ExperimentConfig, Overrides};
use cfuq_core::model::Architecture;
use cfuq_core::uq::EstimatorKind;
use clap::{Args, Parser, Subcommand};

/// Uncertainty-filtered counterfactual explanations for molecular property regression.
#[derive(Parser)]
#[command(name = "cfuq", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Recompute all metrics of a finished run from its artifacts and compare
    /// them with its report.json.
    Recompute { out_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Comma-separated estimator kinds, e.g. `random,de,de_mve`.
    #[arg(long, value_delimiter = ',')]
    estimator: Option<Vec<EstimatorKind>>,
    /// gcn, gin or gatv2lite.
    #[arg(long)]
    arch: Option<Architecture>,
    /// iid, ood_struct or ood_value.
    #[arg(long)]
    split: Option<SplitKind>,
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: args.seed,
        repetitions: args.repetitions,
        estimators: args.estimator,
        architecture: args.arch,
        split: args.split,
    })?;
    let report = run_experiment(&cfg, &args.out_dir)?;
    println!("{:<14} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}", "estimator", "runs", "R2", "rho", "UER-mean", "UER-max", "RLL");
    for (name, agg) in &report.aggregates {
        let m = |k: &str| agg.metrics.get(k).map_or("-".to_string(), |s| format!("{:.3}", s.mean));
        println!(
            "{:<14} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}",
            name,
            agg.runs - agg.failed,
            m("r2"),
            m("rho"),
            m("uer_auc_mean"),
            m("uer_auc_max"),
            m("rll")
        );
    }
    println!("report written to {}", args.out_dir.join("report.json").display());
    let failed = report.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!("{failed} run(s) failed; see report.json");
    }
    Ok(())
}

fn check(out_dir: PathBuf) -> anyhow::Result<()> {
    let stored = read_report(&out_dir.join("report.json")).context("reading report")?;
    let rebuilt = recompute(&out_dir)?;
    if stored != rebuilt {
        bail!("recomputed metrics differ from report.json");
    }
    println!("{} runs recomputed; metrics match report.json", rebuilt.runs.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Recompute { out_dir }) => check(out_dir),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
