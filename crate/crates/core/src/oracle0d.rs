//! Homogeneous reduction of the sliding-support problems.
//!
//! With sliding supports on the minimum planes, traction-free remaining faces
//! and a uniform source, the fields stay uniform: the deformation is a
//! diagonal stretch, Darcy flux vanishes and every equation becomes
//! algebraic. The resulting system of at most five unknowns is solved by a
//! dense Newton iteration with a central-difference Jacobian, independent of
//! the finite-element machinery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{dpsi_p, piola, pore_pressure, source_theta, Kinematics, MaterialParams};
use crate::tensor::Mat3;
use crate::time_stepper::ramp_factor;
use crate::weak_forms::ProblemKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousState {
    pub dim: usize,
    /// Diagonal of the problem's own map: `F` for the forward problem,
    /// `f = F^{-1}` for the refconf problem. Unused entries are 1.
    pub stretches: [f64; 3],
    /// Multiplier (Pa).
    pub lambda: f64,
    /// Lagrangian porosity (forward) or Eulerian reference porosity (refconf).
    pub phi: f64,
    /// Time (s).
    pub t: f64,
}

impl HomogeneousState {
    pub fn rest(dim: usize, params: &MaterialParams) -> Self {
        HomogeneousState { dim, stretches: [1.0; 3], lambda: 0.0, phi: params.phi_bar, t: 0.0 }
    }

    pub fn jacobian(&self) -> f64 {
        self.stretches[..self.dim].iter().product()
    }

    /// Spatial porosity: `phi / J` forward, `phi0` refconf.
    pub fn avg_porosity(&self, problem: ProblemKind) -> f64 {
        match problem {
            ProblemKind::Forward => self.phi / self.jacobian(),
            ProblemKind::Refconf => self.phi,
        }
    }

    /// Pore pressure (Pa). `phi_data` is the reference porosity (forward)
    /// or the imaged porosity (refconf).
    pub fn pressure(&self, problem: ProblemKind, phi_data: f64, params: &MaterialParams) -> f64 {
        match problem {
            ProblemKind::Forward => pore_pressure(self.phi, phi_data, self.lambda, params),
            ProblemKind::Refconf => {
                let big_j = 1.0 / self.jacobian();
                dpsi_p(big_j * phi_data, params) - dpsi_p(self.phi, params) - self.lambda + params.p_ref
            }
        }
    }

    fn unknowns(&self) -> Vec<f64> {
        let mut u = self.stretches[..self.dim].to_vec();
        u.push(self.lambda);
        u.push(self.phi);
        u
    }

    fn with_unknowns(&self, u: &[f64]) -> Self {
        let mut s = *self;
        s.stretches[..self.dim].copy_from_slice(&u[..self.dim]);
        s.lambda = u[self.dim];
        s.phi = u[self.dim + 1];
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle Newton did not converge in {iterations} iterations (residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },
    #[error("oracle left the admissible set: {0}")]
    Inadmissible(String),
    #[error("oracle needs at least one step")]
    NoSteps,
}

/// Mass-equation variant of the algebraic system.
#[derive(Clone, Copy)]
enum MassClosure {
    /// Backward-Euler step from `phi_prev`.
    Step { phi_prev: f64, dt: f64, ramp: f64 },
    /// Stationary state: zero net source.
    Steady,
}

/// Scaled residual: stress rows over `B`, constraint, mass row times `dt`
/// (or pressure over `p_a` when steady).
fn residual(problem: ProblemKind, s: &HomogeneousState, phi_data: f64, closure: MassClosure, params: &MaterialParams) -> Result<Vec<f64>, OracleError> {
    let dim = s.dim;
    if s.stretches[..dim].iter().any(|&a| !(a > 0.0)) {
        return Err(OracleError::Inadmissible(format!("stretches {:?}", &s.stretches[..dim])));
    }
    if !(s.phi > 0.0) {
        return Err(OracleError::Inadmissible(format!("porosity {}", s.phi)));
    }
    let diag = |v: [f64; 3]| Mat3::<f64>::from_f64([[v[0], 0.0, 0.0], [0.0, v[1], 0.0], [0.0, 0.0, v[2]]]);
    let mut r = Vec::with_capacity(dim + 2);
    let j_map = s.jacobian();
    match problem {
        ProblemKind::Forward => {
            let p_tot = piola(&Kinematics::new(diag(s.stretches)), s.lambda, params);
            for i in 0..dim {
                r.push(p_tot.get(i, i) / params.b);
            }
            r.push(j_map - s.phi - (1.0 - phi_data));
        }
        ProblemKind::Refconf => {
            let inv = [0, 1, 2].map(|i| 1.0 / s.stretches[i]);
            let pk = piola(&Kinematics::new(diag(inv)), 0.0, params);
            for i in 0..dim {
                // sigma_ii = j P_ii F_ii + lambda
                r.push((j_map * pk.get(i, i) * inv[i] + s.lambda) / params.b);
            }
            r.push(j_map * (1.0 - s.phi) - (1.0 - phi_data));
        }
    }
    let p = s.pressure(problem, phi_data, params);
    match closure {
        MassClosure::Step { phi_prev, dt, ramp } => {
            let sign = if problem == ProblemKind::Forward { 1.0 } else { -1.0 };
            let theta = source_theta(p, ramp, params) / params.rho_f;
            r.push(dt * (sign * (s.phi - phi_prev) / dt - theta));
        }
        MassClosure::Steady => {
            let (num, den) = params.sources.iter().fold((0.0, 0.0), |(n, d), sp| (n + sp.beta * sp.pressure, d + sp.beta));
            let target = if den > 0.0 { num / den } else { p };
            let scale = params.sources.iter().map(|sp| sp.pressure.abs()).fold(1.0, f64::max);
            r.push((p - target) / scale);
        }
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Inadmissible("non-finite residual".into()));
    }
    Ok(r)
}

fn solve(problem: ProblemKind, guess: HomogeneousState, phi_data: f64, closure: MassClosure, params: &MaterialParams) -> Result<HomogeneousState, OracleError> {
    let mut u = guess.unknowns();
    let n = u.len();
    let scales: Vec<f64> = (0..n).map(|i| if i == guess.dim { params.b } else { 1.0 }).collect();
    let eval = |u: &[f64]| residual(problem, &guess.with_unknowns(u), phi_data, closure, params);
    let mut r = eval(&u)?;
    let max_iter = 60;
    for it in 0..max_iter {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            return Ok(guess.with_unknowns(&u));
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * scales[j].max(u[j].abs());
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            let (rp, rm) = (eval(&up)?, eval(&um)?);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let du = jac
            .lu()
            .solve(&DVector::from_iterator(n, r.iter().map(|v| -v)))
            .ok_or_else(|| OracleError::Inadmissible(format!("singular Jacobian at iteration {it}")))?;
        // halve until admissible and not worse
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(du.iter()).map(|(a, d)| a + step * d).collect();
            match eval(&trial) {
                Ok(rt) if rt.iter().map(|v| v * v).sum::<f64>().sqrt() < norm || step < 1e-3 => {
                    u = trial;
                    r = rt;
                    break;
                }
                _ if step < 1e-3 => return Err(OracleError::Divergence { iterations: it, residual: norm }),
                _ => step *= 0.5,
            }
        }
        if du.iter().zip(&u).all(|(d, x)| d.abs() <= 1e-15 * x.abs().max(1.0)) {
            return Ok(guess.with_unknowns(&u));
        }
    }
    let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual < 1e-11 {
        return Ok(guess.with_unknowns(&u));
    }
    Err(OracleError::Divergence { iterations: max_iter, residual })
}

/// One backward-Euler step of the homogeneous system. `phi_data` is the
/// reference porosity (forward) or imaged porosity (refconf).
pub fn oracle_step(
    prev: &HomogeneousState,
    dt: f64,
    ramp: f64,
    params: &MaterialParams,
    problem: ProblemKind,
    phi_data: f64,
) -> Result<HomogeneousState, OracleError> {
    let mut s = solve(problem, *prev, phi_data, MassClosure::Step { phi_prev: prev.phi, dt, ramp }, params)?;
    s.t = prev.t + dt;
    Ok(s)
}

/// `n_steps` linear-ramp steps from `start`, including `start` itself.
pub fn oracle_trajectory_from(
    start: HomogeneousState,
    params: &MaterialParams,
    dt: f64,
    t_ramp: f64,
    n_steps: usize,
    problem: ProblemKind,
    phi_data: f64,
) -> Result<Vec<HomogeneousState>, OracleError> {
    if n_steps == 0 {
        return Err(OracleError::NoSteps);
    }
    let mut out = vec![start];
    for k in 1..=n_steps {
        let t = k as f64 * dt;
        let mut s = oracle_step(out.last().expect("non-empty"), dt, ramp_factor(t, t_ramp), params, problem, phi_data)?;
        s.t = t;
        out.push(s);
    }
    Ok(out)
}

/// Trajectory from the zero-load state with uniform data `phi_bar`.
pub fn oracle_trajectory(params: &MaterialParams, dim: usize, dt: f64, t_ramp: f64, n_steps: usize, problem: ProblemKind) -> Result<Vec<HomogeneousState>, OracleError> {
    oracle_trajectory_from(HomogeneousState::rest(dim, params), params, dt, t_ramp, n_steps, problem, params.phi_bar)
}

/// Stationary homogeneous state reached from `guess` (zero net source).
pub fn oracle_stationary(guess: HomogeneousState, params: &MaterialParams, problem: ProblemKind, phi_data: f64) -> Result<HomogeneousState, OracleError> {
    solve(problem, guess, phi_data, MassClosure::Steady, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRoundTrip {
    /// Stationary refconf reference porosity.
    pub phi0: f64,
    /// Refconf stretch of `f`.
    pub inverse_stretch: f64,
    /// Spatial porosity the forward oracle returns from `phi0`.
    pub recovered: f64,
    /// Forward stretch; the product with `inverse_stretch` should be 1.
    pub forward_stretch: f64,
    pub forward_steps: usize,
}

/// Refconf stationary state, then the forward trajectory started from it
/// and marched until the pressure settles at the source target.
pub fn oracle_round_trip(params: &MaterialParams, dim: usize, dt: f64, t_ramp: f64, max_steps: usize) -> Result<OracleRoundTrip, OracleError> {
    let back = oracle_stationary(HomogeneousState::rest(dim, params), params, ProblemKind::Refconf, params.phi_bar)?;
    let start = HomogeneousState { phi: back.phi, ..HomogeneousState::rest(dim, params) };
    let target = oracle_stationary(start, params, ProblemKind::Forward, back.phi)?;
    let mut s = start;
    let mut steps = 0;
    while steps < max_steps {
        steps += 1;
        let t = steps as f64 * dt;
        s = oracle_step(&s, dt, ramp_factor(t, t_ramp), params, ProblemKind::Forward, back.phi)?;
        if t >= t_ramp && (s.phi - target.phi).abs() <= 1e-13 * target.phi {
            break;
        }
    }
    Ok(OracleRoundTrip {
        phi0: back.phi,
        inverse_stretch: back.stretches[0],
        recovered: s.avg_porosity(ProblemKind::Forward),
        forward_stretch: s.stretches[0],
        forward_steps: steps,
    })
}
