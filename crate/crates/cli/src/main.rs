use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "jumpwave", about = "Wave experiments across a coefficient jump", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a run manifest).
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without computing anything.
    Validate { config: PathBuf },
    /// Print the runner and library versions.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = jumpwave_cli::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let code = match cli.command {
        Command::Run { config, out } => jumpwave_cli::run_path(&config, out.as_deref()),
        Command::Validate { config } => jumpwave_cli::validate_path(&config),
        Command::Version => {
            println!("jumpwave {} (core {})", env!("CARGO_PKG_VERSION"), jumpwave_core::VERSION);
            0
        }
    };
    ExitCode::from(code as u8)
}
