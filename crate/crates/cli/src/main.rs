//! `posegeom`: runnable experiments over the posegeom library.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage, parse or I/O error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posegeom::io::PoseFile;
use posegeom::metrics::EvalProtocol;
use posegeom::GeomError;
use serde::de::DeserializeOwned;
use serde::Serialize;

use report::{config_hash, Format, Table};

#[derive(Debug, Parser)]
#[command(name = "posegeom", version, about = "Geometry experiments for metric-scale 3D pose estimation")]
struct Cli {
    /// JSON configuration for the subcommand; defaults apply to absent fields.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Seed for stochastic subcommands; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize Gaussian heatmaps, decode them and report recovery errors.
    Roundtrip,
    /// Weak vs full perspective root-depth error against the depth ratio.
    ReconstructCompare,
    /// Bone-length root-depth recovery against noise and target mismatch.
    ScaleRecovery,
    /// Pose-error metrics of predictions against ground truth.
    Evaluate {
        #[arg(long, value_name = "JSON")]
        pred: PathBuf,
        #[arg(long, value_name = "JSON")]
        gt: PathBuf,
    },
    /// Receptive-field centers under normal and centered striding.
    StridingReport,
}

enum Failure {
    Usage(String),
    Geom(GeomError),
}

impl From<GeomError> for Failure {
    fn from(e: GeomError) -> Self {
        Failure::Geom(e)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: parse error: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn finish(table: Table, config: &impl Serialize, cli: &Cli) -> Result<(), Failure> {
    let text = table.render(cli.format, &config_hash(config));
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(dir) = cli.out.as_deref().and_then(Path::parent) {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(Failure::Usage(format!("output directory {} does not exist", dir.display())));
        }
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Roundtrip => {
            let mut cfg: commands::RoundtripConfig = load_config(config)?;
            cfg.seed = cli.seed.or(cfg.seed);
            finish(commands::roundtrip(&cfg)?, &cfg, cli)
        }
        Command::ReconstructCompare => {
            let mut cfg: commands::CompareConfig = load_config(config)?;
            cfg.seed = cli.seed.or(cfg.seed);
            finish(commands::reconstruct_compare(&cfg)?, &cfg, cli)
        }
        Command::ScaleRecovery => {
            let mut cfg: commands::ScaleRecoveryConfig = load_config(config)?;
            cfg.seed = cli.seed.or(cfg.seed);
            finish(commands::scale_recovery(&cfg)?, &cfg, cli)
        }
        Command::Evaluate { pred, gt } => {
            let protocol: EvalProtocol = load_config(config)?;
            let (p, g): (PoseFile, PoseFile) = (read_json(pred)?, read_json(gt)?);
            finish(commands::evaluate(&protocol, &p, &g)?, &protocol, cli)
        }
        Command::StridingReport => {
            let cfg: commands::StridingReportConfig = load_config(config)?;
            finish(commands::striding_report(&cfg)?, &cfg, cli)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Geom(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 1 } else { 2 })
        }
    }
}
