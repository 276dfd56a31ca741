use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpfl_cli::commands;

/// Deterministic lab for differentially private federated learning:
/// train with ST/FT/HT strategies, sweep grids, audit privacy leakage.
#[derive(Parser)]
#[command(name = "dpfl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        /// Experiment config (TOML). Every omitted block uses the bundled
        /// fixture defaults.
        #[arg(long, short)]
        config: PathBuf,
        /// Override any config key: --set federation.strategy=FT
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Experiment directory (defaults to <output root>/<config hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of experiments and summarize them.
    Sweep {
        /// Sweep spec (TOML): base config, axes, seeds.
        #[arg(long, short)]
        spec: PathBuf,
        /// Sweep directory (defaults to <output root>/sweep-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool size (cells are independent; results never depend on
        /// this).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run membership and source inference audits on a stored experiment.
    Audit {
        /// Experiment directory produced by `run` with retained gradients.
        #[arg(long, short)]
        dir: PathBuf,
    },
    /// LDA-project a config's source/target pair and report the domain gap.
    DomainGap {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shift magnitudes to sweep (defaults to the configured magnitude).
        #[arg(long, value_delimiter = ',')]
        magnitudes: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-client sizes and class mixtures for a config's partition.
    PartitionInspect {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides, out } => {
            commands::cmd_run(&config, &overrides, out.as_deref()).map(|_| ())
        }
        Command::Sweep { spec, out, jobs } => {
            commands::cmd_sweep(&spec, out.as_deref(), jobs).map(|_| ())
        }
        Command::Audit { dir } => commands::cmd_audit(&dir),
        Command::DomainGap { config, overrides, magnitudes, out } => {
            commands::cmd_domain_gap(&config, &overrides, &magnitudes, out.as_deref()).map(|_| ())
        }
        Command::PartitionInspect { config, overrides } => {
            commands::cmd_partition_inspect(&config, &overrides)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
