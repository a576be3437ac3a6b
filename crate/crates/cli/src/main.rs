mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use error::{CliError, CliResult};

/// Shared-basis RRAM crossbar experiments.
#[derive(Debug, Parser)]
#[command(name = "basisn", version)]
struct Cli {
    /// Experiment configuration (JSON); flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    coeff_bits: Option<u32>,
    #[arg(long, global = true)]
    crossbars: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    tg_groups: Option<usize>,
    /// Bits per RRAM cell (0 = full precision).
    #[arg(long, global = true)]
    cell_bits: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose pretrained weights into basis codes and write a checkpoint.
    Decompose {
        /// Tensor container with one f64 tensor per layer.
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
        /// Built-in network name or network JSON the weights must match.
        #[arg(long)]
        network: Option<String>,
    },
    /// Train the toy model with alternating basis/coefficient updates.
    Train,
    /// Train across the coefficient-bit, dimension and cell-bit grid.
    SweepAccuracy,
    /// Pack TG configurations for a checkpoint or a network.
    Schedule {
        #[arg(long, value_name = "DIR", conflicts_with = "network")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        network: Option<String>,
    },
    /// Run a checkpoint through the crossbar model and check it densely.
    Simulate {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Tensor container with the input vectors; random when omitted.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Compare BasisN against weight-stationary reprogramming.
    Cost {
        /// Networks to evaluate (repeatable); defaults to the configured list.
        #[arg(long = "network")]
        networks: Vec<String>,
    },
    /// Summarize the outputs already present in the output directory.
    Report,
}

fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        workers: cli.workers,
        coeff_bits: cli.coeff_bits,
        crossbars: cli.crossbars,
        dim: cli.dim,
        tg_groups: cli.tg_groups,
        cell_bits: cli.cell_bits,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Decompose { weights, network } => commands::decompose::run(&cfg, weights, network.as_deref()),
        Command::Train => commands::train::run(&cfg),
        Command::SweepAccuracy => commands::sweep::run(&cfg),
        Command::Schedule { checkpoint, network } => {
            commands::schedule::run(&cfg, checkpoint.as_deref(), network.as_deref())
        }
        Command::Simulate { checkpoint, input } => commands::simulate::run(&cfg, checkpoint, input.as_deref()),
        Command::Cost { networks } => commands::cost::run(&cfg, networks),
        Command::Report => commands::report::run(&cfg),
    })
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
            e.exit_code()
        }
    }
}
