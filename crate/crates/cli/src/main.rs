use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperqst_cli::commands::{cmd_metrics, cmd_protocol, cmd_reconstruct, cmd_replicate_paper, cmd_simulate};
use hyperqst_cli::{CliResult, Options};

#[derive(Parser)]
#[command(name = "hyperqst", version, about = "Simulated Bayesian tomography of polarization/frequency-bin hyperentangled photons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); built-in defaults when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Retained posterior samples [default: 1024].
    #[arg(long, value_name = "N")]
    samples: Option<usize>,
    /// Suppress progress and summary lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the measurement-setting list.
    Protocol(Common),
    /// Draw a synthetic coincidence dataset.
    Simulate(Common),
    /// Run the posterior sampler on a dataset and write a report.
    Reconstruct {
        /// Dataset file produced by `simulate`.
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Synthetic experiments at the published fidelities, with a comparison table.
    ReplicatePaper(Common),
    /// Fidelities and entanglement bounds of a state, report or ensemble export.
    Metrics {
        /// Report or ensemble export; the configured ground truth when absent.
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn options(c: &Common) -> Options {
    Options { config: c.config.clone(), seed: c.seed, out: c.out.clone(), samples: c.samples, quiet: c.quiet }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Protocol(c) => cmd_protocol(&options(&c)).map(drop),
        Command::Simulate(c) => cmd_simulate(&options(&c)).map(drop),
        Command::Reconstruct { dataset, common } => cmd_reconstruct(&options(&common), &dataset).map(drop),
        Command::ReplicatePaper(c) => cmd_replicate_paper(&options(&c)).map(drop),
        Command::Metrics { input, common } => cmd_metrics(&options(&common), input.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
