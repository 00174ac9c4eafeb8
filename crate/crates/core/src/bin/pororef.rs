use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pororef::config::{read_raw, ConfigError, RawConfig, RunConfig};
use pororef::driver::{execute, Command};
use pororef::weak_forms::FormulationKind;

#[derive(Parser)]
#[command(name = "pororef", version, about = "Stress-free reference configurations of nonlinear poroelastic bodies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    formulation: Option<Formulation>,
    /// Comma-separated Anderson depths; single runs use the first.
    #[arg(long, global = true, value_delimiter = ',')]
    aa_depth: Option<Vec<usize>>,
    /// Relative stationarity tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Cells per axis: one value for every axis, or one per axis (e.g. 10,2,2).
    #[arg(long, global = true, value_delimiter = ',')]
    mesh_n: Option<Vec<usize>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Forward problem from the configured (reference) mesh.
    Forward,
    /// Reference configuration of the configured (imaged) mesh.
    Refconf,
    /// Refconf, warp, then forward on the recovered reference.
    Roundtrip,
    /// One run per Anderson depth.
    AaSweep,
    /// Spatially homogeneous trajectory.
    Oracle,
}

#[derive(ValueEnum, Clone, Copy)]
enum Formulation {
    Primal,
    MixedP,
    MixedU,
}

impl From<Formulation> for FormulationKind {
    fn from(f: Formulation) -> Self {
        match f {
            Formulation::Primal => FormulationKind::Primal,
            Formulation::MixedP => FormulationKind::MixedP,
            Formulation::MixedU => FormulationKind::MixedU,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut raw = match &cli.config {
        Some(p) => read_raw(p)?,
        None => RawConfig::default(),
    };
    if let Some(f) = cli.formulation {
        raw.formulation = Some(f.into());
    }
    if let Some(d) = &cli.aa_depth {
        raw.aa_depth = Some(d.clone());
    }
    if let Some(t) = cli.tol {
        raw.tol = Some(t);
    }
    if let Some(o) = &cli.out {
        raw.output_dir = Some(o.clone());
    }
    let mut cfg = RunConfig::from_raw(&raw)?;
    if let Some(n) = &cli.mesh_n {
        raw.mesh_cells = Some(match n.as_slice() {
            [one] => vec![*one; cfg.dim()],
            many => many.to_vec(),
        });
        cfg = RunConfig::from_raw(&raw)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors; 2 is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    let cmd = match cli.command {
        Cmd::Forward => Command::Forward,
        Cmd::Refconf => Command::Refconf,
        Cmd::Roundtrip => Command::Roundtrip,
        Cmd::AaSweep => Command::AaSweep,
        Cmd::Oracle => Command::Oracle,
    };
    match execute(cmd, &cfg) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}

