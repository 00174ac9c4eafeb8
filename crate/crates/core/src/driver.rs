//! Run orchestration for the CLI and the FFI layer.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{echo_config, ProblemChoice, RunConfig};
use crate::io::{write_fields, write_json, write_oracle_csv, write_trajectory_csv};
use crate::mesh::{Mesh, MeshError};
use crate::oracle0d::{oracle_trajectory, OracleError};
use crate::time_stepper::{run_system, PoroSystem, RunError, RunOutcome, TimeStepperConfig};
use crate::weak_forms::{BoundarySpec, FormulationKind, ProblemKind};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{stage}: {source}")]
    Run { stage: &'static str, source: RunError },
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl DriverError {
    /// Solver failures as opposed to configuration or I/O problems.
    pub fn is_divergence(&self) -> bool {
        match self {
            DriverError::Run { source, .. } => source.is_divergence(),
            DriverError::Oracle(_) => true,
            _ => false,
        }
    }
}

fn stage(name: &'static str) -> impl Fn(RunError) -> DriverError {
    move |source| DriverError::Run { stage: name, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: ProblemKind,
    pub formulation: FormulationKind,
    pub mesh_cells: Vec<usize>,
    pub aa_depth: usize,
    pub tol: f64,
    pub total_steps: usize,
    /// Post-activation fixed-point iterations.
    pub iterations: usize,
    pub fallbacks: usize,
    pub newton_iterations: usize,
    pub r0: f64,
    pub final_rel_residual: f64,
    pub phi_avg: f64,
    /// Final time (s).
    pub t_final: f64,
    pub wall_time_s: f64,
}

impl RunSummary {
    fn new(problem: ProblemKind, cfg: &RunConfig, stepper: &TimeStepperConfig, out: &RunOutcome, wall: f64) -> Self {
        RunSummary {
            problem,
            formulation: cfg.formulation,
            mesh_cells: cfg.mesh_cells.clone(),
            aa_depth: stepper.aa_depth,
            tol: stepper.stationary_tol,
            total_steps: out.total_steps,
            iterations: out.iterations,
            fallbacks: out.fallbacks,
            newton_iterations: out.newton_iterations,
            r0: out.r0,
            final_rel_residual: out.final_rel_residual,
            phi_avg: out.phi_avg,
            t_final: out.t,
            wall_time_s: wall,
        }
    }
}

/// A finished single-problem run.
pub struct SolvedRun {
    pub system: PoroSystem,
    pub outcome: RunOutcome,
    pub summary: RunSummary,
}

impl SolvedRun {
    /// Trajectory CSV, VTK fields and JSON summary named after `stem`.
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_trajectory_csv(&self.outcome.trajectory, &dir.join(format!("{stem}_trajectory.csv")))?;
        write_fields(&self.system, &self.outcome.state, &dir.join(format!("{stem}.vtk")))?;
        write_json(&self.summary, &dir.join(format!("{stem}_summary.json")))
    }
}

/// Solves one problem on `mesh` with vertex porosity data (imaged porosity
/// for refconf, reference porosity for forward).
pub fn solve_on(
    problem: ProblemKind,
    cfg: &RunConfig,
    stepper: &TimeStepperConfig,
    mesh: &Mesh,
    porosity_data: &[f64],
    label: &'static str,
) -> Result<SolvedRun, DriverError> {
    let t0 = Instant::now();
    let bcs = BoundarySpec::sliding(mesh.dim(), cfg.formulation);
    let system = PoroSystem::new(problem, cfg.formulation, mesh, &cfg.params, &bcs, porosity_data, stepper.dt)
        .map_err(|e| stage(label)(RunError::Setup(e)))?;
    let outcome = run_system(&system, system.initial_state(), stepper).map_err(stage(label))?;
    let summary = RunSummary::new(problem, cfg, stepper, &outcome, t0.elapsed().as_secs_f64());
    Ok(SolvedRun { system, outcome, summary })
}

/// Uniform-data run on the configured mesh.
pub fn run_single(problem: ProblemKind, cfg: &RunConfig, depth: usize) -> Result<SolvedRun, DriverError> {
    let mesh = cfg.build_mesh()?;
    let data = vec![cfg.params.phi_bar; mesh.num_vertices()];
    let label = match problem {
        ProblemKind::Forward => "forward",
        ProblemKind::Refconf => "refconf",
    };
    solve_on(problem, cfg, &cfg.stepper_with_depth(depth), &mesh, &data, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripSummary {
    pub refconf: RunSummary,
    pub forward: RunSummary,
    /// Forward stationary average spatial porosity.
    pub recovered_phi: f64,
    pub phi_bar: f64,
    /// |recovered - phi_bar| / phi_bar.
    pub phi_rel_error: f64,
    /// Largest vertex distance between the imaged mesh and the deformed
    /// computed reference (m).
    pub geometric_mismatch: f64,
    /// Average reference porosity from the refconf solve.
    pub reference_phi: f64,
}

pub struct RoundTrip {
    pub refconf: SolvedRun,
    pub forward: SolvedRun,
    pub reference_mesh: Mesh,
    pub summary: RoundTripSummary,
}

/// Refconf on the imaged mesh, warp by the vertex inverse displacement,
/// forward on the recovered reference mesh.
pub fn run_roundtrip(cfg: &RunConfig) -> Result<RoundTrip, DriverError> {
    let stepper = cfg.stepper_with_depth(cfg.primary_depth());
    let imaged = cfg.build_mesh()?;
    let phi_bar = vec![cfg.params.phi_bar; imaged.num_vertices()];
    let refconf = solve_on(ProblemKind::Refconf, cfg, &stepper, &imaged, &phi_bar, "refconf")?;
    let d_hat = refconf.system.vertex_displacement(&refconf.outcome.state);
    let reference_mesh = imaged.warped(&d_hat)?;
    let phi0 = refconf.system.porosity(&refconf.outcome.state).to_vec();
    let forward = solve_on(ProblemKind::Forward, cfg, &stepper, &reference_mesh, &phi0, "forward")?;
    let d = forward.system.vertex_displacement(&forward.outcome.state);
    let mut mismatch = 0.0f64;
    for ((x, xr), dv) in imaged.coords().iter().zip(reference_mesh.coords()).zip(&d) {
        let dist = (0..3).map(|k| (xr[k] + dv[k] - x[k]).powi(2)).sum::<f64>().sqrt();
        mismatch = mismatch.max(dist);
    }
    let recovered = forward.outcome.phi_avg;
    let summary = RoundTripSummary {
        refconf: refconf.summary.clone(),
        forward: forward.summary.clone(),
        recovered_phi: recovered,
        phi_bar: cfg.params.phi_bar,
        phi_rel_error: (recovered - cfg.params.phi_bar).abs() / cfg.params.phi_bar,
        geometric_mismatch: mismatch,
        reference_phi: refconf.outcome.phi_avg,
    };
    Ok(RoundTrip { refconf, forward, reference_mesh, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth: usize,
    pub total_steps: usize,
    pub iterations: usize,
    pub fallbacks: usize,
    pub phi_avg: f64,
    pub final_rel_residual: f64,
    pub wall_time_s: f64,
}

/// One run per configured depth of `problem`.
pub fn run_aa_sweep(cfg: &RunConfig, problem: ProblemKind) -> Result<Vec<SweepRow>, DriverError> {
    if cfg.aa_depth.is_empty() {
        return Err(DriverError::Usage("aa_depth list is empty".into()));
    }
    let mut rows = Vec::new();
    for &depth in &cfg.aa_depth {
        let r = run_single(problem, cfg, depth)?;
        let s = &r.summary;
        rows.push(SweepRow {
            depth,
            total_steps: s.total_steps,
            iterations: s.iterations,
            fallbacks: s.fallbacks,
            phi_avg: s.phi_avg,
            final_rel_residual: s.final_rel_residual,
            wall_time_s: s.wall_time_s,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("depth,iterations,total_steps,fallbacks,phiAvg,wall_time_s\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.depth, r.iterations, r.total_steps, r.fallbacks, r.phi_avg, r.wall_time_s));
    }
    s
}

/// Problem to use for single-problem subcommands when the config says
/// `roundtrip`.
fn sweep_problem(cfg: &RunConfig) -> ProblemKind {
    match cfg.problem {
        ProblemChoice::Forward => ProblemKind::Forward,
        _ => ProblemKind::Refconf,
    }
}

/// Executes `command` against `cfg`, writing everything into `cfg.output_dir`.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<serde_json::Value, DriverError> {
    let dir = cfg.output_dir.as_path();
    echo_config(cfg, dir)?;
    let value = match command {
        Command::Forward | Command::Refconf => {
            let problem = if command == Command::Forward { ProblemKind::Forward } else { ProblemKind::Refconf };
            let r = run_single(problem, cfg, cfg.primary_depth())?;
            r.write(dir, problem.name())?;
            serde_json::to_value(&r.summary)
        }
        Command::Roundtrip => {
            let rt = run_roundtrip(cfg)?;
            rt.refconf.write(dir, "refconf")?;
            rt.forward.write(dir, "forward")?;
            write_json(&rt.summary, &dir.join("roundtrip_summary.json"))?;
            serde_json::to_value(&rt.summary)
        }
        Command::AaSweep => {
            let problem = sweep_problem(cfg);
            let rows = run_aa_sweep(cfg, problem)?;
            std::fs::write(dir.join("aa_sweep.csv"), sweep_csv(&rows))?;
            write_json(&rows, &dir.join("aa_sweep.json"))?;
            serde_json::to_value(&rows)
        }
        Command::Oracle => {
            let problem = sweep_problem(cfg);
            let s = &cfg.stepper;
            let n = ((s.t_ramp / s.dt).ceil() as usize).max(1) * 60;
            let states = oracle_trajectory(&cfg.params, cfg.dim(), s.dt, s.t_ramp, n, problem)?;
            write_oracle_csv(&states, problem, &dir.join("oracle.csv"))?;
            let last = states.last().expect("non-empty");
            serde_json::to_value(serde_json::json!({
                "problem": problem,
                "steps": n,
                "phi_avg": last.avg_porosity(problem),
                "lambda": last.lambda,
                "stretch_a": last.stretches[0],
                "stretch_b": last.stretches[1],
            }))
        }
    };
    Ok(value.map_err(std::io::Error::other)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Refconf,
    Roundtrip,
    AaSweep,
    Oracle,
}
