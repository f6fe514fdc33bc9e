//! Command-line pipeline: mesh generation, eigenbasis, simulation, training,
//! fiber selection, evaluation, parameter sweeps and the timing study.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use config::{Overrides, PipelineConfig};
use fiberflow::select::SelectionMethod;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fiberflow",
    version,
    about = "Fiber-orientation and conduction-velocity estimation from sparse activation maps"
)]
struct Cli {
    /// JSON config file; flags override file values, which override defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Disable the rayon thread pool (single-threaded loops).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark mesh (sheet, icosphere, holed sphere).
    Genmesh {
        /// Output mesh file (.vtk or .off).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the Laplace-Beltrami eigenbasis of a mesh (cached by content hash).
    Eigenbasis {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign rule-based fibers, solve activation maps, sample noisy measurements.
    Simulate {
        #[arg(long)]
        mesh: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ensemble on a simulated dataset.
    Train {
        #[arg(long)]
        mesh: PathBuf,
        /// Eigenbasis file (required in spectral mode).
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Dataset directory from `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
        /// Optional loss-history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Aggregate the trained ensemble into one fiber field.
    Select {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// medoid | mean-tensor
        #[arg(long, default_value = "medoid")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional VTK export with fibers and diagnostics.
        #[arg(long)]
        vtk: Option<PathBuf>,
    },
    /// Compute all metrics against the simulated ground truth.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output report JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vtk: Option<PathBuf>,
    },
    /// Noise x density grid of full runs (resumable per cell).
    Sweep {
        /// Comma-separated noise levels in ms, e.g. 0,1,2.
        #[arg(long)]
        sigmas: String,
        /// Comma-separated densities in points/cm^2, e.g. 4,16,32.
        #[arg(long)]
        densities: String,
        /// Output directory for per-cell JSON and aggregate CSV tables.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ensemble-size timing study (sequential members for timing fidelity).
    Timing {
        /// Comma-separated ensemble sizes, e.g. 1,5,10,20.
        #[arg(long, default_value = "1,5,10,20")]
        sizes: String,
        /// Iterations in the timed segment.
        #[arg(long, default_value_t = 10_000)]
        timed_iterations: usize,
        /// Output JSON (a CSV is written alongside).
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(&cli.overrides)?;
    match &cli.command {
        Command::Genmesh { out } => commands::genmesh(&cfg, out),
        Command::Eigenbasis { mesh, out } => commands::eigenbasis(&cfg, mesh, out),
        Command::Simulate { mesh, out } => commands::simulate(&cfg, mesh, out),
        Command::Train {
            mesh,
            basis,
            data,
            out,
            history,
        } => commands::train(
            &cfg,
            mesh,
            basis.as_deref(),
            data,
            out,
            history.as_deref(),
            cli.sequential,
        ),
        Command::Select {
            mesh,
            basis,
            data,
            checkpoint,
            method,
            out,
            vtk,
        } => {
            let method = match method.as_str() {
                "medoid" => SelectionMethod::Medoid,
                "mean-tensor" => SelectionMethod::MeanTensor,
                other => anyhow::bail!("unknown method '{other}' (medoid | mean-tensor)"),
            };
            commands::select(
                &cfg,
                mesh,
                basis.as_deref(),
                data,
                checkpoint,
                method,
                out,
                vtk.as_deref(),
            )
        }
        Command::Eval {
            mesh,
            basis,
            data,
            checkpoint,
            out,
            vtk,
        } => commands::eval(
            &cfg,
            mesh,
            basis.as_deref(),
            data,
            checkpoint,
            out,
            vtk.as_deref(),
        ),
        Command::Sweep {
            sigmas,
            densities,
            out,
        } => {
            let sigmas = config::parse_list::<f64>(sigmas)?;
            let densities = config::parse_list::<f64>(densities)?;
            commands::sweep(&cfg, &sigmas, &densities, out, cli.sequential)
        }
        Command::Timing {
            sizes,
            timed_iterations,
            out,
        } => {
            let sizes = config::parse_list::<usize>(sizes)?;
            commands::timing(&cfg, &sizes, *timed_iterations, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numerical = err
                .chain()
                .filter_map(|c| c.downcast_ref::<fiberflow::Error>())
                .any(|e| e.is_numerical());
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
