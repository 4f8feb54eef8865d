use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctsa_cli::average::average_files;
use ctsa_cli::config::load;
use ctsa_cli::oracle::run_riccati;
use ctsa_cli::runner::{run_experiment, RunOptions};
use ctsa_cli::summary::Summary;
use ctsa_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "ctsa", version, about = "Joint online parameter estimation and optimal sensor placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct OutputArgs {
    /// Directory under which the config's `output_dir` is resolved.
    #[arg(long, env = "CTSA_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and check its acceptance thresholds.
    Run {
        config: PathBuf,
        /// Worker threads; overrides the config. Results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare tangent filters and model derivatives with finite differences.
    CheckGradients {
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Average trajectory CSVs element-wise.
    Average {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Steady-state Riccati quantities at the truth and the initial iterates.
    Riccati {
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn report(summary: &Summary) -> Result<()> {
    for c in summary.checks() {
        println!(
            "{} {} {}: {:.6e} {} {:.6e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.group,
            c.metric,
            c.value,
            c.relation,
            c.threshold
        );
    }
    let failed = summary.failed();
    println!("{} checks, {failed} failed", summary.checks().count());
    if failed > 0 {
        Err(CliError::Threshold { failed })
    } else {
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, workers, output } => {
            let loaded = load(&config)?;
            let opts = RunOptions {
                workers,
                output_root: output.output_root,
            };
            report(&run_experiment(&loaded, &opts)?)
        }
        Command::CheckGradients { config, output } => {
            let loaded = load(&config)?;
            let opts = RunOptions {
                workers: None,
                output_root: output.output_root,
            };
            report(&ctsa_cli::gradcheck::run_gradient_check(&loaded, &opts)?)
        }
        Command::Average { inputs, out } => {
            let avg = average_files(&inputs, &out)?;
            println!("averaged {} files, {} rows -> {}", inputs.len(), avg.len(), out.display());
            Ok(())
        }
        Command::Riccati { config, output } => {
            let loaded = load(&config)?;
            let opts = RunOptions {
                workers: None,
                output_root: output.output_root,
            };
            for r in run_riccati(&loaded, &opts)? {
                println!("{} {}: {:.12e}", r.point, r.quantity, r.value);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctsa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
