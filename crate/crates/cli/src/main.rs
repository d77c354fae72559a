use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use snf_cli::commands::{cmd_flow, cmd_gradcheck, cmd_surface, cmd_train, load_config, CliError, GradcheckFlags};
use snf_core::verification::GRADCHECK_TOL;

#[derive(Parser)]
#[command(name = "snf", version, about = "Train and verify stable neural flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write loss.csv, model.bin, metrics.csv and config.echo.
    Train {
        config: PathBuf,
        /// Run directory (default: runs/<config name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare adjoint gradients with finite differences; writes gradcheck.csv.
    Gradcheck {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also compare the chain-rule input-projection gradient; writes projection.csv.
        #[arg(long)]
        compare_projection: bool,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Evaluate the learned energy on a grid; writes surface.csv.
    Surface {
        config: PathBuf,
        model: PathBuf,
        /// Output directory (default: the snapshot's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump depth trajectories of every sample; writes flow.csv.
    Flow {
        config: PathBuf,
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_dir(config: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        let stem = config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        Path::new("runs").join(stem)
    })
}

fn beside(model: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| model.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out } => {
            let c = load_config(&config)?;
            let dir = run_dir(&config, out);
            let summary = cmd_train(&c, &dir)?;
            for s in &summary.splits {
                let acc = s.metrics.accuracy.map_or_else(String::new, |a| format!(", accuracy {a:.4}"));
                println!("{}: loss {:.6e}, mse {:.6e}{acc}", s.split, s.metrics.mean_loss, s.metrics.mse);
            }
            println!("wrote {}", dir.display());
        }
        Command::Gradcheck {
            config,
            out,
            compare_projection,
            corrupt_adjoint,
        } => {
            let c = load_config(&config)?;
            let dir = run_dir(&config, out);
            let flags = GradcheckFlags {
                compare_projection,
                corrupt_adjoint,
            };
            let report = cmd_gradcheck(&c, &dir, flags)?;
            println!(
                "gradcheck passed: {} rows, max relative error {:.3e} < {GRADCHECK_TOL:e}",
                report.rows.len(),
                report.max_rel_err()
            );
        }
        Command::Surface { config, model, out } => {
            let c = load_config(&config)?;
            let rows = cmd_surface(&c, &model, &beside(&model, out))?;
            println!("wrote {rows} surface rows");
        }
        Command::Flow { config, model, out } => {
            let c = load_config(&config)?;
            let rows = cmd_flow(&c, &model, &beside(&model, out))?;
            println!("wrote {rows} flow rows");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
