use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pesc_cli::commands;

#[derive(Parser)]
#[command(name = "pesc", version, about = "Constrained Bayesian optimization with decoupled evaluations")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a batch experiment and write a JSONL trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Create an empty engine state for ask/tell use.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Emit the next (task, x) and mark it pending.
    Suggest {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        resource: Option<String>,
    },
    /// Record evaluated values for a task at x.
    Observe {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        task: String,
        /// Comma-separated coordinates.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// JSON array in task order or object keyed by function name.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Compare PESC against the rejection-sampling acquisition.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a trace to CSV.
    Plotdata {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Verb::Run { config, seed, output } => commands::run(&config, seed, output).map(|v| v.to_string()),
        Verb::Init { config, state } => commands::init(&config, &state).map(|v| v.to_string()),
        Verb::Suggest { state, resource } => commands::suggest(&state, resource.as_deref()).map(|v| v.to_string()),
        Verb::Observe { state, task, x, values } => commands::observe(&state, &task, &x, &values).map(|v| v.to_string()),
        Verb::Oracle { config, seed } => commands::oracle(&config, seed).map(|v| v.to_string()),
        Verb::Plotdata { trace } => commands::plotdata(&trace),
    };
    match result {
        Ok(out) => {
            println!("{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
