//! `errorbar`: train, distill, evaluate and apply ensemble error-bar models.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 run failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use errorbar::cli::{self, RunConfig};
use errorbar::Error;

#[derive(Parser)]
#[command(name = "errorbar", version, about = "Distill calibrated ensemble error bars into a single network")]
struct Args {
    /// JSON run configuration. Omitted keys take their defaults; print them
    /// with `errorbar show-config`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory holding bundle.json and the reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage end to end: bundle, augmented set, learning curve, stats table, plot.
    Pipeline,
    /// Fit the scaler and Model A; creates <out>/bundle.json.
    TrainA,
    /// Train the bootstrap ensemble (uncalibrated).
    TrainEnsemble,
    /// Fit the ensemble's spread calibration from k-fold residuals.
    Calibrate,
    /// Write the labelled augmented set to <out>/augmented.csv.
    Augment,
    /// Train Model B on the augmented set.
    Distill,
    /// Cross-validate Model B on the augmented set.
    Evaluate,
    /// Learning curve over scale factors and sizes, stats table and plot.
    Curve,
    /// Time ensemble against distilled error bars on one thread.
    Bench {
        /// Bundle to benchmark (default: <out>/bundle.json).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Predict values and error bars for a CSV with Model A and Model B.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the configured synthetic dataset to <out>/dataset.csv.
    Synth,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn load_config(args: &Args) -> errorbar::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(args: &Args) -> errorbar::Result<()> {
    let out: &Path = &args.out;
    let cfg = || load_config(args);
    match &args.command {
        Command::Pipeline => cli::cmd_pipeline(&cfg()?, out).map(drop),
        Command::TrainA => cli::cmd_train_a(&cfg()?, out).map(drop),
        Command::TrainEnsemble => cli::cmd_train_ensemble(&cfg()?, out).map(drop),
        Command::Calibrate => cli::cmd_calibrate(&cfg()?, out).map(drop),
        Command::Augment => cli::cmd_augment(&cfg()?, out).map(drop),
        Command::Distill => cli::cmd_distill(&cfg()?, out).map(drop),
        Command::Evaluate => cli::cmd_evaluate(&cfg()?, out).map(drop),
        Command::Curve => cli::cmd_curve(&cfg()?, out).map(drop),
        Command::Bench { bundle } => {
            let path = bundle.clone().unwrap_or_else(|| out.join(cli::pipeline::BUNDLE_FILE));
            let r = cli::cmd_bench(&cfg()?, &path, Some(out))?;
            println!(
                "ensemble {:.0} ns/row, distilled {:.0} ns/row, speedup {:.2}x, parameters {} vs {}",
                r.ensemble_ns_per_row, r.distilled_ns_per_row, r.speedup, r.ensemble_param_count, r.distilled_param_count
            );
            Ok(())
        }
        Command::Predict { bundle, input, output } => cli::cmd_predict(bundle, input, output).map(drop),
        Command::Synth => cli::cmd_synth(&cfg()?, out).map(drop),
        Command::ShowConfig => {
            println!("{}", cfg()?.to_json_pretty());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
