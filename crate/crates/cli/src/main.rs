use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdc_core::pipeline::{Outcome, Pipeline, PipelineConfig, RunOptions, Stage, StageRun};
use sdc_core::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  other failure (I/O, numerical)
  2  invalid configuration or usage
  3  missing upstream stage output
  4  invalid or inconsistent input data
  5  upstream stage output modified since it was written";

#[derive(Parser)]
#[command(name = "sdc", version, about = "Shared decodable concept discovery pipeline", after_help = EXIT_CODES)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, default_value = "sdc.toml")]
    config: PathBuf,

    /// Worker threads for parallel work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rerun stages even when their outputs are current.
    #[arg(long, global = true)]
    force: bool,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default config to the --config path.
    Init {
        #[arg(long, default_value = "data")]
        data_root: PathBuf,
        #[arg(long, default_value = "runs")]
        output_root: PathBuf,
    },
    /// Generate a planted synthetic dataset into the data root.
    Synth,
    /// Split folds, select voxels and normalize responses.
    Prepare,
    /// Fit per-participant decoders.
    Train,
    /// Top-k retrieval on the test fold.
    Evaluate,
    /// Cluster concept vectors across participants for each epsilon.
    Cluster,
    /// Representative items (and caption words) per cluster.
    Interpret,
    /// Markdown summary of a run.
    Report,
    /// Every analysis stage from prepare to report.
    All,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_) | Error::UnknownStrategy { .. } => 2,
        Error::MissingUpstream { .. } => 3,
        Error::UpstreamModified { .. } => 5,
        Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::SingularMatrix { .. } => 1,
        _ => 4,
    }
}

fn print_run(run: &StageRun) {
    let what = match &run.outcome {
        Outcome::Ran => "ran".to_string(),
        Outcome::Skipped => "up to date".to_string(),
        Outcome::Recomputed(reason) => format!("recomputed ({reason})"),
    };
    println!("{:<9} {what}: {}", run.stage.name(), run.dir.display());
}

fn run(cli: Cli) -> sdc_core::Result<()> {
    if let Command::Init { data_root, output_root } = &cli.command {
        if cli.config.exists() && !cli.force {
            return Err(Error::ConfigInvalid(format!(
                "{} exists (use --force to overwrite)",
                cli.config.display()
            )));
        }
        let text = PipelineConfig::with_paths(data_root, output_root).to_toml_string()?;
        std::fs::write(&cli.config, text).map_err(|source| Error::Io {
            path: cli.config.clone(),
            source,
        })?;
        println!("wrote {}", cli.config.display());
        return Ok(());
    }

    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let pipeline = Pipeline::new(
        config,
        RunOptions {
            force: cli.force,
            jobs: cli.jobs,
        },
    )?;
    let stage = match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::All => {
            for r in pipeline.run_all()? {
                print_run(&r);
            }
            return Ok(());
        }
        Command::Synth => Stage::Synth,
        Command::Prepare => Stage::Prepare,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Cluster => Stage::Cluster,
        Command::Interpret => Stage::Interpret,
        Command::Report => Stage::Report,
    };
    print_run(&pipeline.run(stage)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
