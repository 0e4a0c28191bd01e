use std::path::PathBuf;
use std::process::ExitCode;

use cacrisk_core::config::RunConfig;
use cacrisk_core::pipeline::{self, EvalTarget};
use cacrisk_core::Error;
use clap::{Args, Parser, Subcommand};

/// Synthetic coronary-calcium cohorts, calcium scoring, risk networks and
/// cross-validated comparison.
#[derive(Debug, Parser)]
#[command(name = "cacrisk", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom dataset (volumes, manifest.csv, truth.csv).
    Phantom {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every subject of a dataset into scores.csv.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a whole dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated AUC of one method or one checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Method name (agatston, category, volume, sqrt_volume, grade,
        /// risknet, hyrisknet_grade, hyrisknet_agatston).
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        method: Option<String>,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the configured methods on shared folds.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> cacrisk_core::Result<RunConfig> {
    let mut text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?,
        None => String::new(),
    };
    // Command-line values are appended as ordinary lines, so a key given
    // both in the file and on the command line is a duplicate.
    for o in &common.overrides {
        text.push_str(&format!("\n{o}"));
    }
    if let Some(seed) = common.seed {
        text.push_str(&format!("\nrun.seed = {seed}"));
    }
    if let Some(jobs) = common.jobs {
        text.push_str(&format!("\nrun.jobs = {jobs}"));
    }
    RunConfig::parse(&text)
}

fn run(cli: &Cli) -> cacrisk_core::Result<()> {
    let cfg = load_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| match &cli.command {
        Command::Phantom { out } => {
            let rows = pipeline::run_phantom(&cfg, out)?;
            println!("wrote {} subjects to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Score { data, out } => {
            let subjects = pipeline::run_score(&cfg, data, out)?;
            println!("scored {} subjects into {}", subjects.len(), out.join(pipeline::SCORES_FILE).display());
            Ok(())
        }
        Command::Train { data, out } => {
            let ckpt = pipeline::run_train(&cfg, data, out)?;
            println!(
                "trained stage {} model {} -> {}",
                ckpt.stage,
                ckpt.params.fingerprint(),
                out.join(pipeline::CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Command::Eval { data, out, method, checkpoint } => {
            let target = match (method, checkpoint) {
                (Some(m), _) => EvalTarget::Method(m.clone()),
                (None, Some(c)) => EvalTarget::Checkpoint(c.clone()),
                (None, None) => return Err(Error::Config("eval needs --method or --checkpoint".into())),
            };
            let r = pipeline::run_eval(&cfg, data, &target, out)?;
            println!("{}: AUC {:.4} ± {:.4} over {} folds", r.method, r.mean, r.std, r.fold_aucs.len());
            Ok(())
        }
        Command::Compare { data, out } => {
            let results = pipeline::run_compare(&cfg, data, out)?;
            for r in &results {
                println!("{:<20} {:.4} ± {:.4}", r.method, r.mean, r.std);
            }
            Ok(())
        }
        Command::Gradcheck { out } => {
            let g = pipeline::run_gradcheck(&cfg, out)?;
            println!(
                "max relative error {:e} over {} coordinates ({} skipped)",
                g.max_relative_error, g.checked, g.skipped
            );
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
