use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use factlab::config::CONFIG_KEYS;
use factlab::{commands, validate, CliError, ExperimentConfig};

// Training reallocates multi-megabyte activations every step; the system
// allocator hands those back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Desk-scale laboratory for how language models acquire and forget
/// factual knowledge during pretraining.
#[derive(Parser)]
#[command(name = "factlab", version, after_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.rows=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the fictional knowledge set.
    #[command(after_help = CONFIG_KEYS)]
    Gen(#[command(flatten)] Common),
    /// Train with injections, writing trace, manifest and checkpoints.
    #[command(after_help = CONFIG_KEYS)]
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Compute effectivity and retainability from a trace.
    #[command(after_help = CONFIG_KEYS)]
    Measure {
        #[command(flatten)]
        common: Common,
        /// Trace file (default: <output_dir>/trace.jsonl).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Manifest (default: manifest.json beside the trace).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit retainability against log-time.
    #[command(after_help = CONFIG_KEYS)]
    Fit {
        #[command(flatten)]
        common: Common,
        /// Metrics table (default: <output_dir>/metrics.csv).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the accumulation/forgetting simulator.
    #[command(after_help = CONFIG_KEYS)]
    Simulate(#[command(flatten)] Common),
    /// Write summary tables and plots from existing artifacts.
    #[command(after_help = CONFIG_KEYS)]
    Report(#[command(flatten)] Common),
    /// gen, train, measure, fit, simulate and report in sequence.
    #[command(after_help = CONFIG_KEYS)]
    Pipeline(#[command(flatten)] Common),
    /// Check every artifact in the output directory against its schema.
    #[command(after_help = CONFIG_KEYS)]
    Validate(#[command(flatten)] Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(c.config.as_deref(), &c.overrides)
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen(c) => {
            let p = commands::cmd_gen(&load(&c)?)?;
            println!("wrote {}", p.display());
        }
        Command::Train { common, resume } => {
            let m = commands::cmd_train(&load(&common)?, resume)?;
            println!("run {} {:?} at step {}/{}", m.run_id, m.status, m.steps_completed, m.total_steps);
        }
        Command::Measure { common, trace, manifest } => {
            let p = commands::cmd_measure(&load(&common)?, trace.as_deref(), manifest.as_deref())?;
            println!("wrote {}", p.display());
        }
        Command::Fit { common, metrics } => {
            let p = commands::cmd_fit(&load(&common)?, metrics.as_deref())?;
            println!("wrote {}", p.display());
        }
        Command::Simulate(c) => {
            for p in commands::cmd_simulate(&load(&c)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report(c) => {
            let p = commands::cmd_report(&load(&c)?)?;
            println!("wrote {}", p.display());
        }
        Command::Pipeline(c) => {
            let cfg = load(&c)?;
            commands::cmd_pipeline(&cfg)?;
            println!("pipeline complete in {}", cfg.paths.output_dir.display());
        }
        Command::Validate(c) => {
            let cfg = load(&c)?;
            let mut first_err = None;
            for (name, res) in validate::validate_dir(&cfg.paths.output_dir) {
                match res {
                    Ok(()) => println!("ok    {name}"),
                    Err(e) => {
                        println!("FAIL  {name}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
