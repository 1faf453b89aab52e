use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use l1gp_cli::commands;

#[derive(Parser, Debug)]
#[command(name = "l1gp", version, about = "L1 adaptive control with GP learning: simulations and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario; writes trace.csv, events.csv, summary.json, manifest.json.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Bisection search for the input time-delay margin; writes margin.json.
    Margin {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Bracket width in seconds.
        #[arg(long)]
        resolution: Option<f64>,
        /// Simulated time per candidate in seconds.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Empirical coverage of the GP uniform error bound; writes coverage.json.
    BoundCheck {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_probe: Option<usize>,
    },
    /// Run two scenarios and compare ‖x − x_id‖ window means; writes compare.json.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out),
        Command::Margin {
            config,
            out,
            resolution,
            horizon,
        } => commands::margin(&config, &out, resolution, horizon),
        Command::BoundCheck {
            config,
            out,
            n_train,
            n_probe,
        } => commands::bound_check(&config, &out, n_train, n_probe),
        Command::Compare {
            config_a,
            config_b,
            out,
        } => commands::compare(&config_a, &config_b, &out),
    };
    match result {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("l1gp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
