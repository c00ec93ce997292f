use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use perturblab_cli::{execute, CliError, Command, RunConfig};

/// Averaged adversarial perturbations over model populations.
#[derive(Parser)]
#[command(name = "perturblab", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train the model population and write checkpoints.
    Train(Common),
    /// Generate perturbation records for every attack and setting.
    Attack(Common),
    /// Attack-strength and recognizability tables.
    Evaluate(Common),
    /// Contour-only versus background-only attack strength.
    Contour(Common),
    /// Epsilon sweep of contour and background parts.
    Sweep(Common),
    /// Cross-algorithm cosine similarity of contour parts.
    Similarity(Common),
    /// Render every record as an image with a metadata sidecar.
    Render(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Run directory name under the runs root.
    #[arg(long)]
    run_id: Option<String>,
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::Train(c) => (Command::Train, c),
            Sub::Attack(c) => (Command::Attack, c),
            Sub::Evaluate(c) => (Command::Evaluate, c),
            Sub::Contour(c) => (Command::Contour, c),
            Sub::Sweep(c) => (Command::Sweep, c),
            Sub::Similarity(c) => (Command::Similarity, c),
            Sub::Render(c) => (Command::Render, c),
        }
    }
}

fn run(command: Command, args: &Common) -> Result<PathBuf, CliError> {
    let config = RunConfig::load(&args.config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| execute(command, &config, args.run_id.as_deref()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (command, args) = Cli::parse().command.split();
    match run(command, &args) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
