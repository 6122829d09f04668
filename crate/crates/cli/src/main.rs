use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stein_cv::harness::{self, CsvReport, ExperimentConfig};
use stein_cv::Error;

#[derive(Parser)]
#[command(name = "stein-cv", version, about = "Variance-reduced policy gradients with Stein control variates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Variance of each estimator on a frozen policy across sample sizes.
    VarianceEval(Common),
    /// PPO training runs, one per (method, seed).
    Train(Common),
    /// Numerical checks of the identity, reductions and derivatives.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; defaults to `experiment.output` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&ExperimentConfig) -> stein_cv::Result<CsvReport>) = match &cli.command {
        Command::VarianceEval(c) => (c, harness::run_variance_eval),
        Command::Train(c) => (c, harness::run_training),
        Command::Check(c) => (c, harness::run_identity_checks),
    };

    let mut cfg = match ExperimentConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("stein-cv: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    let Some(out) = common.out.clone().or_else(|| cfg.experiment.output.clone().map(PathBuf::from)) else {
        eprintln!("stein-cv: no output path (pass --out or set experiment.output)");
        return ExitCode::from(EXIT_CONFIG);
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("stein-cv: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            eprintln!("stein-cv: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("stein-cv: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = report.write(&out) {
        eprintln!("stein-cv: writing {}: {e}", out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }

    if matches!(cli.command, Command::Check(_)) {
        let pass = report.column("pass").expect("check report has a pass column");
        let failed: Vec<&str> = report.rows.iter().filter(|r| r[pass] != "pass").map(|r| r[0].as_str()).collect();
        if !failed.is_empty() {
            eprintln!("stein-cv: failed checks: {}", failed.join(", "));
            return ExitCode::from(EXIT_CHECK_FAILED);
        }
    }
    ExitCode::SUCCESS
}
