use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ducfem::commands;
use ducfem::config::{load_config, RunConfig};

#[derive(Parser)]
#[command(name = "ducfem", about = "Acoustic-liner impedance optimization pipeline")]
struct Cli {
    /// Run configuration (INI); defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output directory; overrides the config's output.dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order problem over the snapshot grid
    GenerateSnapshots,
    /// Build the POD basis and reduced operators from stored snapshots
    BuildPod,
    /// Out-of-sample FOM-vs-ROM error study
    Validate,
    /// Smoothed-CVaR impedance optimization per configured beta
    Optimize,
    /// Deterministic optimization against FOM and ROM from the same start
    CompareFomRom,
}

fn run() -> ducfem::Result<()> {
    let cli = Cli::parse();
    let cfg: RunConfig = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| ducfem::Error::io(&out, e))?;
    let workers = if cli.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.workers
    };
    match cli.command {
        Command::GenerateSnapshots => commands::cmd_generate_snapshots(&cfg, workers, &out),
        Command::BuildPod => commands::cmd_build_pod(&cfg, workers, &out),
        Command::Validate => commands::cmd_validate(&cfg, workers, &out),
        Command::Optimize => commands::cmd_optimize(&cfg, workers, &out),
        Command::CompareFomRom => commands::cmd_compare_fom_rom(&cfg, workers, &out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
