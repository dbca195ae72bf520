use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bayeshead::{inspect::inspect, run_from_file, validate_config, CliError};

#[derive(Parser)]
#[command(name = "bayeshead", version, about = "Bayesian classifiers with calibrated abstention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print shape and convergence diagnostics for saved chains.
    Inspect {
        #[arg(required = true)]
        chains: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, force, out } => run_from_file(&config, out.as_deref(), force).map(|o| {
            for line in &o.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", o.files.len(), o.out_dir.display());
        }),
        Command::Validate { config } => validate_config(&config)
            .map(|c| println!("{}: ok ({} experiment, seed {})", config.display(), c.experiment.name(), c.seed))
            .map_err(CliError::Validation),
        Command::Inspect { chains } => {
            let refs: Vec<&std::path::Path> = chains.iter().map(PathBuf::as_path).collect();
            inspect(&refs).map(|s| print!("{s}")).map_err(CliError::from)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
