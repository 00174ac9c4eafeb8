//! Backward-Euler marching for the forward and reference-configuration
//! problems, the source continuation ramp and the run drivers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{pore_pressure, MaterialParams};
use crate::fe::assembly::{Assembler, AssemblyOptions};
use crate::fe::dofmap::DofMap;
use crate::fe::newton::{Newton, NewtonError, NewtonOptions, NewtonReport, NonlinearProblem};
use crate::fe::sparse::CsrMatrix;
use crate::fe::FeError;
use crate::mesh::Mesh;
use crate::stationary::{accelerated_fixed_point, stationary_residual, FixedPointError, PorosityMap, StationarityMonitor, StationaryError};
use crate::tensor::Mat3;
use crate::weak_forms::{
    apply_bcs, row_scaling, BcError, BoundarySpec, Constraints, FieldKind, FormulationKind, KernelMode, Layout, PoroKernel, ProblemKind,
};
use crate::fe::newton::norm2;

/// Quadrature degree of every assembly.
pub const QUADRATURE_DEGREE: usize = 6;

/// Number of load levels in staged continuation.
pub const STAGED_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampMode {
    Linear,
    Staged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStepperConfig {
    /// Time step (s).
    pub dt: f64,
    /// Duration of the linear source ramp (s).
    pub t_ramp: f64,
    /// Relative stationarity tolerance on |R| / R0.
    pub stationary_tol: f64,
    pub max_steps: usize,
    pub ramp_mode: RampMode,
    pub newton: NewtonOptions,
    /// Anderson depth applied after the ramp; 0 is plain time stepping.
    pub aa_depth: usize,
}

impl Default for TimeStepperConfig {
    fn default() -> Self {
        TimeStepperConfig {
            dt: 0.01,
            t_ramp: 0.1,
            stationary_tol: 1e-6,
            max_steps: 5000,
            ramp_mode: RampMode::Linear,
            newton: NewtonOptions::default(),
            aa_depth: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{key} = {value}: {rule}")]
    Invalid { key: &'static str, value: f64, rule: &'static str },
}

impl TimeStepperConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, value, rule| Err(ConfigError::Invalid { key, value, rule });
        if !(self.dt > 0.0) {
            return bad("dt", self.dt, "must be positive");
        }
        if !(self.t_ramp >= 0.0) {
            return bad("t_ramp", self.t_ramp, "must be non-negative");
        }
        if !(self.stationary_tol > 0.0 && self.stationary_tol < 1.0) {
            return bad("tol", self.stationary_tol, "must lie in (0, 1)");
        }
        if self.max_steps == 0 {
            return bad("max_steps", 0.0, "must be at least 1");
        }
        if self.newton.max_iter == 0 {
            return bad("newton_max_iter", 0.0, "must be at least 1");
        }
        if !(self.newton.abs_tol > 0.0) {
            return bad("newton_abs_tol", self.newton.abs_tol, "must be positive");
        }
        if !(self.newton.rel_tol >= 0.0) {
            return bad("newton_rel_tol", self.newton.rel_tol, "must be non-negative");
        }
        Ok(())
    }

    /// Step index at which the ramp is complete and R0 is captured.
    pub fn activation_step(&self) -> usize {
        ((self.t_ramp / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

pub fn ramp_factor(t: f64, t_ramp: f64) -> f64 {
    if t_ramp <= 0.0 {
        1.0
    } else {
        (t / t_ramp).min(1.0)
    }
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Bc(#[from] BcError),
    #[error("porosity data has {got} values, mesh has {expected} vertices")]
    DataLength { got: usize, expected: usize },
    #[error("invalid material: {0}")]
    Material(String),
}

/// Discretized system of one problem on one mesh.
pub struct PoroSystem {
    problem: ProblemKind,
    layout: Layout,
    params: MaterialParams,
    assembler: Assembler,
    constraints: Constraints,
    data: Vec<f64>,
    body_force: [f64; 3],
}

impl PoroSystem {
    /// `porosity_data` holds vertex values of the given porosity field: the
    /// reference porosity for the forward problem, the imaged porosity for
    /// the refconf problem.
    pub fn new(
        problem: ProblemKind,
        formulation: FormulationKind,
        mesh: &Mesh,
        params: &MaterialParams,
        bcs: &BoundarySpec,
        porosity_data: &[f64],
        dt: f64,
    ) -> Result<Self, SetupError> {
        params.validate().map_err(|e| SetupError::Material(e.to_string()))?;
        if porosity_data.len() != mesh.num_vertices() {
            return Err(SetupError::DataLength { got: porosity_data.len(), expected: mesh.num_vertices() });
        }
        let layout = Layout::new(mesh.dim(), formulation);
        let dofmap = DofMap::new(mesh, layout.fields());
        let constraints = apply_bcs(bcs, layout, mesh, &dofmap)?;
        let mut assembler = Assembler::new(mesh, dofmap, QUADRATURE_DEGREE)?;
        assembler.set_row_scale(row_scaling(mesh, assembler.dofmap(), layout, params, dt));
        assembler.set_constrained(&constraints.dofs);
        let mut data = vec![0.0; assembler.len()];
        let r = assembler.dofmap().range(1);
        data[r].copy_from_slice(porosity_data);
        Ok(PoroSystem { problem, layout, params: params.clone(), assembler, constraints, data, body_force: [0.0; 3] })
    }

    /// Sliding supports with uniform porosity data.
    pub fn uniform(problem: ProblemKind, formulation: FormulationKind, mesh: &Mesh, params: &MaterialParams, dt: f64) -> Result<Self, SetupError> {
        let bcs = BoundarySpec::sliding(mesh.dim(), formulation);
        Self::new(problem, formulation, mesh, params, &bcs, &vec![params.phi_bar; mesh.num_vertices()], dt)
    }

    pub fn set_body_force(&mut self, g: [f64; 3]) {
        self.body_force = g;
    }

    pub fn problem(&self) -> ProblemKind {
        self.problem
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn mesh(&self) -> &Mesh {
        self.assembler.mesh()
    }

    pub fn dofmap(&self) -> &DofMap {
        self.assembler.dofmap()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.assembler.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assembler.is_empty()
    }

    pub fn field_range(&self, kind: FieldKind) -> std::ops::Range<usize> {
        match self.layout.field(kind) {
            Some(f) => self.dofmap().range(f),
            None => 0..0,
        }
    }

    pub fn kernel(&self, dt: f64, ramp: f64, mode: KernelMode) -> PoroKernel<'_> {
        PoroKernel { problem: self.problem, layout: self.layout, params: &self.params, dt, ramp, body_force: self.body_force, mode }
    }

    /// Zero-load equilibrium: no displacement, porosity equal to the data,
    /// zero multiplier, `mu` equal to the pressure and zero flux.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = self.data.clone();
        let mu = self.field_range(FieldKind::Mu);
        if !mu.is_empty() {
            let phi = self.field_range(FieldKind::Porosity);
            for (i, j) in mu.zip(phi) {
                x[i] = pore_pressure(self.data[j], self.data[j], 0.0, &self.params);
            }
        }
        self.constraints.lift(&mut x);
        x
    }

    pub fn porosity<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.field_range(FieldKind::Porosity)]
    }

    pub fn with_porosity(&self, x: &[f64], porosity: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        y[self.field_range(FieldKind::Porosity)].copy_from_slice(porosity);
        y
    }

    /// Vertex values of the first `dim` displacement components.
    pub fn vertex_displacement(&self, x: &[f64]) -> Vec<[f64; 3]> {
        let dm = self.dofmap();
        let dim = self.layout.dim;
        (0..self.mesh().num_vertices())
            .map(|v| {
                let mut d = [0.0; 3];
                for (c, dc) in d.iter_mut().enumerate().take(dim) {
                    *dc = x[dm.global(0, c, v)];
                }
                d
            })
            .collect()
    }

    fn gradient(&self, z: &[f64]) -> Mat3<f64> {
        let s = self.layout.dim + 1;
        Mat3::embed(self.layout.dim, |i, k| z[i * s + 1 + k] + if i == k { 1.0 } else { 0.0 })
    }

    /// Average spatial porosity: forward `int phi dX / int J dX`, refconf
    /// `int phi0 dx / |Omega|`.
    pub fn avg_eulerian_porosity(&self, x: &[f64]) -> f64 {
        let ip = self.layout.dim * (self.layout.dim + 1);
        let phi_int = self.assembler.integrate(x, |z| z[ip]).expect("state length");
        let vol = match self.problem {
            ProblemKind::Forward => self.assembler.integrate(x, |z| self.gradient(z).det()).expect("state length"),
            ProblemKind::Refconf => self.mesh().total_volume(),
        };
        phi_int / vol
    }

    /// `int phi dX`, the conserved fluid content of the forward problem.
    pub fn porosity_integral(&self, x: &[f64]) -> f64 {
        let ip = self.layout.dim * (self.layout.dim + 1);
        self.assembler.integrate(x, |z| z[ip]).expect("state length")
    }

    /// Volume average of `I + grad d`.
    pub fn mean_gradient(&self, x: &[f64]) -> [[f64; 3]; 3] {
        let vol = self.mesh().total_volume();
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.assembler.integrate(x, |z| self.gradient(z).get(i, k)).expect("state length") / vol;
            }
        }
        out
    }

    /// Largest pointwise deviation of `I + grad d` from its mean.
    pub fn gradient_deviation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        let dim = self.layout.dim;
        for i in 0..dim {
            for k in 0..dim {
                let d = self.assembler.max_deviation(x, |z| self.gradient(z).get(i, k)).expect("state length");
                worst = worst.max(d);
            }
        }
        worst
    }
}

struct StepProblem<'a> {
    sys: &'a PoroSystem,
    prev: &'a [f64],
    dt: f64,
    ramp: f64,
}

impl NonlinearProblem for StepProblem<'_> {
    fn size(&self) -> usize {
        self.sys.len()
    }

    fn assemble(&mut self, x: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<(), String> {
        let k = self.sys.kernel(self.dt, self.ramp, KernelMode::Transient);
        self.sys
            .assembler
            .assemble(&k, x, &[self.prev, &self.sys.data], r, jac, AssemblyOptions::default())
            .map_err(|e| e.to_string())?;
        let phi = self.sys.field_range(FieldKind::Porosity);
        if let Some(v) = x[phi].iter().find(|v| !(**v > 0.0)) {
            return Err(format!("non-positive porosity {v}"));
        }
        Ok(())
    }

    fn jacobian_pattern(&self) -> CsrMatrix {
        self.sys.assembler.pattern()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step to t = {time} (ramp {ramp}) failed: {source}")]
pub struct StepError {
    pub time: f64,
    pub ramp: f64,
    pub source: NewtonError,
}

/// One implicit step from `prev`, warm started from `prev`.
pub fn step(sys: &PoroSystem, newton: &mut Newton, prev: &[f64], dt: f64, t_next: f64, ramp: f64) -> Result<(Vec<f64>, NewtonReport), StepError> {
    let mut x = prev.to_vec();
    sys.constraints.lift(&mut x);
    let mut problem = StepProblem { sys, prev, dt, ramp };
    let report = newton.solve(&mut problem, &mut x).map_err(|source| StepError { time: t_next, ramp, source })?;
    Ok((x, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time (s).
    pub t: f64,
    pub phi_avg: f64,
    /// Euclidean norm of the stationary residual.
    pub residual: f64,
    pub rel_residual: Option<f64>,
    pub newton_iters: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("no stationary state within {0} steps")]
    MaxStepsExceeded(usize),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
}

impl RunError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, RunError::Step(_) | RunError::MaxStepsExceeded(_) | RunError::Stationary(_))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: Vec<f64>,
    pub t: f64,
    pub trajectory: Trajectory,
    /// Time steps taken, including the ramp.
    pub total_steps: usize,
    /// Fixed-point iterations after activation, summed over levels in
    /// staged mode.
    pub iterations: usize,
    pub fallbacks: usize,
    pub newton_iterations: usize,
    pub r0: f64,
    pub final_rel_residual: f64,
    pub phi_avg: f64,
}

#[derive(Clone)]
struct Snapshot {
    x: Vec<f64>,
    t: f64,
}

struct Marcher<'a> {
    sys: &'a PoroSystem,
    cfg: &'a TimeStepperConfig,
    newton: Newton,
    /// Fixed ramp level (staged) or `None` for the linear ramp.
    level: Option<f64>,
    trajectory: Trajectory,
    last_newton: usize,
    newton_total: usize,
    r0: Option<f64>,
    steps: usize,
}

impl Marcher<'_> {
    fn ramp(&self, t: f64) -> f64 {
        self.level.unwrap_or_else(|| ramp_factor(t, self.cfg.t_ramp))
    }

    fn record(&mut self, s: &Snapshot, residual: f64, fallback: bool) {
        let rel_residual = self.r0.map(|r0| if r0 > 0.0 { residual / r0 } else { 0.0 });
        self.trajectory.records.push(StepRecord {
            t: s.t,
            phi_avg: self.sys.avg_eulerian_porosity(&s.x),
            residual,
            rel_residual,
            newton_iters: self.last_newton,
            fallback,
        });
    }
}

impl PorosityMap for Marcher<'_> {
    type State = Snapshot;
    type Error = RunError;

    fn advance(&mut self, state: &Snapshot, porosity: &[f64]) -> Result<Snapshot, RunError> {
        if self.steps >= self.cfg.max_steps {
            return Err(RunError::MaxStepsExceeded(self.cfg.max_steps));
        }
        let prev = self.sys.with_porosity(&state.x, porosity);
        // fixed-step times as multiples of dt, so no drift accumulates
        let t = (self.steps + 1) as f64 * self.cfg.dt;
        let ramp = self.ramp(t);
        let (x, report) = step(self.sys, &mut self.newton, &prev, self.cfg.dt, t, ramp)?;
        self.steps += 1;
        self.last_newton = report.iterations;
        self.newton_total += report.iterations;
        Ok(Snapshot { x, t })
    }

    fn project(&self, state: &Snapshot) -> Vec<f64> {
        self.sys.porosity(&state.x).to_vec()
    }

    fn residual_norm(&mut self, state: &Snapshot) -> Result<f64, RunError> {
        Ok(norm2(&stationary_residual(self.sys, &state.x, self.ramp(state.t))?))
    }

    fn observe(&mut self, state: &Snapshot, residual_norm: f64, fallback: bool) {
        self.record(state, residual_norm, fallback);
    }
}

fn lift_fixed_point(e: FixedPointError<RunError>, max_steps: usize) -> RunError {
    match e {
        FixedPointError::MaxIterations(_) => RunError::MaxStepsExceeded(max_steps),
        FixedPointError::Step(e) => e,
        FixedPointError::Monitor(e) => RunError::Stationary(e),
    }
}

/// Marches `sys` from `x0` at `t = 0` to a stationary state.
pub fn run_system(sys: &PoroSystem, x0: Vec<f64>, cfg: &TimeStepperConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let mut m = Marcher {
        sys,
        cfg,
        newton: Newton::new(cfg.newton),
        level: None,
        trajectory: Trajectory::default(),
        last_newton: 0,
        newton_total: 0,
        r0: None,
        steps: 0,
    };
    let mut state = Snapshot { x: x0, t: 0.0 };
    let r = m.residual_norm(&state)?;
    m.record(&state, r, false);
    let mut iterations = 0;
    let mut fallbacks = 0;
    let mut monitor = StationarityMonitor::new(cfg.stationary_tol);
    let mut r0_first: f64 = 0.0;
    let levels: Vec<Option<f64>> = match cfg.ramp_mode {
        RampMode::Linear => vec![None],
        RampMode::Staged => (1..=STAGED_LEVELS).map(|l| Some(l as f64 / STAGED_LEVELS as f64)).collect(),
    };
    for level in levels {
        m.level = level;
        let warmup = if level.is_some() { 1 } else { cfg.activation_step() };
        for k in 1..=warmup {
            let porosity = m.project(&state);
            state = m.advance(&state, &porosity)?;
            let r = m.residual_norm(&state)?;
            if k == warmup {
                // Staged levels share one scale: the largest level-start
                // residual so far. A level that starts converged is skipped.
                let r0 = r.max(r0_first);
                m.r0 = Some(r0);
                monitor.capture(r0);
                monitor.observe(r);
                r0_first = r0;
            }
            m.record(&state, r, false);
        }
        let budget = cfg.max_steps.saturating_sub(m.steps) + 1;
        let out = accelerated_fixed_point(&mut m, state, &mut monitor, cfg.aa_depth, budget).map_err(|e| lift_fixed_point(e, cfg.max_steps))?;
        iterations += out.iterations;
        fallbacks += out.fallbacks;
        state = out.state;
    }
    let final_rel = monitor.relative(monitor.last().unwrap_or(0.0)).unwrap_or(0.0);
    let phi_avg = sys.avg_eulerian_porosity(&state.x);
    Ok(RunOutcome {
        t: state.t,
        state: state.x,
        trajectory: m.trajectory,
        total_steps: m.steps,
        iterations,
        fallbacks,
        newton_iterations: m.newton_total,
        r0: r0_first,
        final_rel_residual: final_rel,
        phi_avg,
    })
}

/// Benchmark run: sliding supports, uniform imaged or reference porosity
/// `phi_bar`, zero-load initial state.
pub fn run(
    problem: ProblemKind,
    formulation: FormulationKind,
    cfg: &TimeStepperConfig,
    params: &MaterialParams,
    mesh: &Mesh,
) -> Result<(PoroSystem, RunOutcome), RunError> {
    cfg.validate()?;
    let sys = PoroSystem::uniform(problem, formulation, mesh, params, cfg.dt)?;
    let x0 = sys.initial_state();
    let out = run_system(&sys, x0, cfg)?;
    Ok((sys, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::SourcePair;

    fn params() -> MaterialParams {
        MaterialParams { volumetric_scale: 2.0, rho_f: 1.0, ..MaterialParams::default() }
    }

    #[test]
    fn ramp_examples() {
        assert!((ramp_factor(0.05, 0.1) - 0.5).abs() < 1e-15);
        assert_eq!(ramp_factor(0.1, 0.1), 1.0);
        assert_eq!(ramp_factor(5.0, 0.1), 1.0);
        assert_eq!(ramp_factor(0.0, 0.0), 1.0);
    }

    #[test]
    fn activation_step_of_benchmark() {
        assert_eq!(TimeStepperConfig::default().activation_step(), 10);
        let c = TimeStepperConfig { t_ramp: 0.0, ..TimeStepperConfig::default() };
        assert_eq!(c.activation_step(), 1);
    }

    #[test]
    fn config_validation() {
        let c = TimeStepperConfig { dt: -1.0, ..TimeStepperConfig::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { key: "dt", .. })));
        let c = TimeStepperConfig { stationary_tol: 1.0, ..TimeStepperConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn average_porosity_examples() {
        let mesh = Mesh::build_unit_square(2, 2, 1.0).unwrap();
        let prm = params();
        let sys = PoroSystem::uniform(ProblemKind::Forward, FormulationKind::Primal, &mesh, &prm, 0.01).unwrap();
        let x = sys.initial_state();
        assert!((sys.avg_eulerian_porosity(&x) - 0.1).abs() < 1e-14);
        // phi^L = 0.2, d = (x, 0) so J = 2
        let mut y = sys.with_porosity(&x, &vec![0.2; mesh.num_vertices()]);
        let pts = sys.dofmap().node_coords(&mesh, crate::fe::element::Family::P2);
        for (n, p) in pts.iter().enumerate() {
            y[sys.dofmap().global(0, 0, n)] = p[0];
        }
        assert!((sys.avg_eulerian_porosity(&y) - 0.1).abs() < 1e-13);
        let rsys = PoroSystem::uniform(ProblemKind::Refconf, FormulationKind::Primal, &mesh, &prm, 0.01).unwrap();
        let z = rsys.with_porosity(&rsys.initial_state(), &vec![0.05; mesh.num_vertices()]);
        assert!((rsys.avg_eulerian_porosity(&z) - 0.05).abs() < 1e-14);
    }

    #[test]
    fn no_source_keeps_the_rest_state() {
        let mesh = Mesh::build_unit_square(2, 2, 0.01).unwrap();
        let prm = MaterialParams { sources: vec![], ..params() };
        for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
            for f in FormulationKind::ALL {
                let (_, out) = run(problem, f, &TimeStepperConfig::default(), &prm, &mesh).unwrap();
                assert_eq!(out.iterations, 0);
                assert_eq!(out.total_steps, 10);
                assert!((out.phi_avg - 0.1).abs() < 1e-14, "{problem:?} {f:?}");
            }
        }
    }

    #[test]
    fn equilibrium_step_is_a_fixed_point() {
        // p = p_a everywhere: the source vanishes and nothing moves
        let mesh = Mesh::build_unit_square(2, 2, 0.01).unwrap();
        let prm = MaterialParams { sources: vec![SourcePair { beta: 1e-4, pressure: 0.0 }], ..params() };
        let sys = PoroSystem::uniform(ProblemKind::Forward, FormulationKind::MixedP, &mesh, &prm, 0.01).unwrap();
        let x0 = sys.initial_state();
        let mut newton = Newton::new(NewtonOptions::default());
        let (x1, rep) = step(&sys, &mut newton, &x0, 0.01, 0.01, 1.0).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(x0, x1);
    }

    #[test]
    fn warm_start_reproduces_converged_step() {
        let mesh = Mesh::build_unit_square(2, 2, 0.01).unwrap();
        let prm = params();
        let sys = PoroSystem::uniform(ProblemKind::Refconf, FormulationKind::Primal, &mesh, &prm, 0.01).unwrap();
        let x0 = sys.initial_state();
        let mut newton = Newton::new(NewtonOptions::default());
        let (x1, _) = step(&sys, &mut newton, &x0, 0.01, 0.01, 0.1).unwrap();
        // solving again from the converged state with the same history
        let mut problem = StepProblem { sys: &sys, prev: &x0, dt: 0.01, ramp: 0.1 };
        let mut x = x1.clone();
        let rep = newton.solve(&mut problem, &mut x).unwrap();
        assert!(rep.iterations <= 1);
        let diff = x.iter().zip(&x1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10 * x1.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }

    #[test]
    fn mass_is_conserved_without_source() {
        // a nonuniform start with theta = 0: fluid redistributes, total stays
        let mesh = Mesh::build_unit_square(3, 3, 0.01).unwrap();
        let prm = MaterialParams { sources: vec![], ..params() };
        for f in FormulationKind::ALL {
            let sys = PoroSystem::uniform(ProblemKind::Forward, f, &mesh, &prm, 0.01).unwrap();
            let mut x = sys.initial_state();
            let phi = sys.field_range(FieldKind::Porosity);
            let pts = mesh.coords().to_vec();
            for (i, p) in phi.clone().zip(&pts) {
                x[i] *= 1.0 + 0.2 * (p[0] / 0.01 - 0.5);
            }
            let start = x[phi.clone()].to_vec();
            let mut newton = Newton::new(NewtonOptions::default());
            let m0 = sys.porosity_integral(&x);
            for k in 1..=3 {
                let (y, _) = step(&sys, &mut newton, &x, 0.01, 0.01 * k as f64, 1.0).unwrap();
                let m1 = sys.porosity_integral(&y);
                assert!(((m1 - m0) / m0).abs() < 1e-10, "{f:?}: {m0} -> {m1}");
                x = y;
            }
            let moved = x[phi].iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(moved > 1e-6, "{f:?}: porosity did not redistribute");
        }
    }

    fn small_run(staged: bool, aa: usize) -> RunOutcome {
        let mesh = Mesh::build_unit_square(2, 2, 0.01).unwrap();
        let cfg = TimeStepperConfig {
            stationary_tol: 1e-5,
            aa_depth: aa,
            ramp_mode: if staged { RampMode::Staged } else { RampMode::Linear },
            ..TimeStepperConfig::default()
        };
        run(ProblemKind::Refconf, FormulationKind::Primal, &cfg, &params(), &mesh).unwrap().1
    }

    #[test]
    fn linear_run_reaches_stationarity() {
        let out = small_run(false, 0);
        assert!(out.final_rel_residual <= 1e-5);
        assert_eq!(out.total_steps, 10 + out.iterations);
        let recs = &out.trajectory.records;
        assert_eq!(recs.len(), out.total_steps + 1);
        for w in recs.windows(2) {
            assert!((w[1].t - w[0].t - 0.01).abs() < 1e-12);
        }
        assert!(recs.iter().all(|r| r.residual.is_finite()));
        assert!(out.phi_avg < 0.05);
    }

    #[test]
    fn staged_and_accelerated_runs_agree() {
        let a = small_run(false, 0);
        let b = small_run(false, 1);
        let c = small_run(true, 1);
        assert!(b.iterations * 2 < a.iterations, "{} vs {}", b.iterations, a.iterations);
        assert!((a.phi_avg - b.phi_avg).abs() < 10.0 * 1e-5 * a.phi_avg.max(1e-3) + 1e-6);
        assert!(((a.phi_avg - c.phi_avg) / a.phi_avg).abs() < 5e-3);
    }
}
