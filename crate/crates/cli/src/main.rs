mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// 4x image super-resolution with an actor network trained by policy gradients.
#[derive(Parser, Debug)]
#[command(name = "spoa", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic PGM patches and a manifest to `dataset_dir`.
    Synth,
    /// Train on the manifest's train split; writes the checkpoint and log.
    Train,
    /// Run the finite-difference gradient suites.
    Gradcheck,
    /// Score the checkpoint and bicubic interpolation on the test split.
    Eval,
    /// Upsample one PGM/PPM image 4x with the checkpoint's actor.
    Infer { input: PathBuf, output: PathBuf },
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| commands::invalid(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SPOA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| commands::invalid(format!("SPOA_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Infer { input, output } => commands::infer(&cfg, input, output),
        Command::Config => {
            print!("{}", cfg.dump());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
