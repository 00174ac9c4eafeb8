//! Steady-state detection and Anderson acceleration of the time-stepping
//! fixed point `S = Pi_phi o T`, where `T` is one backward-Euler step and
//! `Pi_phi` extracts the porosity coefficients.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fe::assembly::AssemblyOptions;
use crate::fe::newton::norm2;
use crate::time_stepper::PoroSystem;
use crate::weak_forms::{FieldKind, FormulationKind, KernelMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("stationarity queried before the normalization R0 was captured")]
    NotCaptured,
    #[error("non-finite stationary residual: {0}")]
    NonFinite(String),
}

/// Steady mass rows of the active formulation, time term omitted,
/// assembled unscaled over porosity test functions.
pub fn stationary_residual(sys: &PoroSystem, x: &[f64], ramp: f64) -> Result<Vec<f64>, StationaryError> {
    let kernel = sys.kernel(1.0, ramp, KernelMode::Stationary);
    let mut r = vec![0.0; x.len()];
    let data = sys.data();
    let opts = AssemblyOptions { row_scaling: false, constraints: false };
    sys.assembler()
        .assemble(&kernel, x, &[x, data], &mut r, None, opts)
        .map_err(|e| StationaryError::NonFinite(e.to_string()))?;
    let rows = match sys.layout().formulation {
        FormulationKind::MixedP => FieldKind::Mu,
        _ => FieldKind::Porosity,
    };
    Ok(r[sys.field_range(rows)].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityMonitor {
    pub tol: f64,
    r0: Option<f64>,
    last: Option<f64>,
}

impl StationarityMonitor {
    pub fn new(tol: f64) -> Self {
        StationarityMonitor { tol, r0: None, last: None }
    }

    /// Stores the normalization. A zero `R0` means the problem starts in its
    /// steady state.
    pub fn capture(&mut self, r0: f64) {
        self.r0 = Some(r0);
        self.last = Some(r0);
    }

    /// Records a residual norm without testing it.
    pub fn observe(&mut self, norm: f64) {
        self.last = Some(norm);
    }

    pub fn r0(&self) -> Option<f64> {
        self.r0
    }

    pub fn last(&self) -> Option<f64> {
        self.last
    }

    pub fn relative(&self, norm: f64) -> Option<f64> {
        self.r0.map(|r0| if r0 > 0.0 { norm / r0 } else { 0.0 })
    }

    pub fn is_stationary(&mut self, residual: &[f64]) -> Result<bool, StationaryError> {
        self.is_stationary_norm(norm2(residual))
    }

    pub fn is_stationary_norm(&mut self, norm: f64) -> Result<bool, StationaryError> {
        let r0 = self.r0.ok_or(StationaryError::NotCaptured)?;
        self.last = Some(norm);
        Ok(norm <= self.tol * r0)
    }
}

/// Anderson mixing history in the Walker-Ni form: least squares on residual
/// differences, which is equivalent to the constrained problem
/// `min |sum a_i r_i|` with `sum a_i = 1`.
#[derive(Debug, Clone)]
pub struct AndersonState {
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    gs: VecDeque<Vec<f64>>,
    weights: Vec<f64>,
}

impl AndersonState {
    pub fn new(depth: usize) -> Self {
        AndersonState { depth, xs: VecDeque::new(), gs: VecDeque::new(), weights: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Weights of the last update, oldest history entry first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reset(&mut self) {
        self.xs.clear();
        self.gs.clear();
        self.weights.clear();
    }

    pub fn update(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), g.len(), "iterate and evaluation must have the same length");
        if self.depth == 0 {
            self.weights = vec![1.0];
            return g.to_vec();
        }
        self.xs.push_back(x.to_vec());
        self.gs.push_back(g.to_vec());
        while self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.gs.pop_front();
        }
        loop {
            let n = self.xs.len();
            if n < 2 {
                self.weights = vec![1.0];
                return g.to_vec();
            }
            match self.solve_gamma() {
                Some(gamma) => {
                    let k = gamma.len();
                    let mut w = vec![0.0; n];
                    w[0] = gamma[0];
                    for i in 1..k {
                        w[i] = gamma[i] - gamma[i - 1];
                    }
                    w[k] = 1.0 - gamma[k - 1];
                    let mut out = vec![0.0; g.len()];
                    for (wi, gi) in w.iter().zip(&self.gs) {
                        for (o, v) in out.iter_mut().zip(gi) {
                            *o += wi * v;
                        }
                    }
                    self.weights = w;
                    return out;
                }
                None => {
                    self.xs.pop_front();
                    self.gs.pop_front();
                }
            }
        }
    }

    /// Coefficients of `min |r_new - dR gamma|`, or `None` when the
    /// difference matrix is numerically rank deficient.
    fn solve_gamma(&self) -> Option<Vec<f64>> {
        let n = self.xs.len();
        let len = self.xs[0].len();
        let res: Vec<Vec<f64>> = self.xs.iter().zip(&self.gs).map(|(x, g)| g.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
        let k = n - 1;
        let dr = DMatrix::from_fn(len, k, |i, j| res[j + 1][i] - res[j][i]);
        let rhs = DVector::from_column_slice(&res[n - 1]);
        if len < k {
            return None;
        }
        let scale = dr.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return None;
        }
        let qr = dr.qr();
        let r = qr.r();
        if (0..k).any(|i| r[(i, i)].abs() <= 1e-13 * scale) {
            return None;
        }
        let qtb = qr.q().transpose() * rhs;
        let gamma = r.solve_upper_triangular(&qtb)?;
        Some(gamma.iter().copied().collect())
    }
}

/// One evaluation of the fixed-point map inside a run.
pub trait PorosityMap {
    type State: Clone;
    type Error;
    /// One time step from `state` with its porosity replaced by `porosity`.
    fn advance(&mut self, state: &Self::State, porosity: &[f64]) -> Result<Self::State, Self::Error>;
    fn project(&self, state: &Self::State) -> Vec<f64>;
    fn residual_norm(&mut self, state: &Self::State) -> Result<f64, Self::Error>;
    /// Called once per accepted iterate.
    fn observe(&mut self, _state: &Self::State, _residual_norm: f64, _fallback: bool) {}
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError<E> {
    #[error("no stationary state after {0} iterations")]
    MaxIterations(usize),
    #[error(transparent)]
    Step(E),
    #[error(transparent)]
    Monitor(StationaryError),
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome<S> {
    pub state: S,
    pub iterations: usize,
    pub fallbacks: usize,
}

/// Accelerated iteration from an already captured monitor. `state` is the
/// output of the activation step; its porosity is the first iterate.
pub fn accelerated_fixed_point<M: PorosityMap>(
    map: &mut M,
    state: M::State,
    monitor: &mut StationarityMonitor,
    depth: usize,
    max_iterations: usize,
) -> Result<FixedPointOutcome<M::State>, FixedPointError<M::Error>> {
    let initial = monitor.last().ok_or(FixedPointError::Monitor(StationaryError::NotCaptured))?;
    if monitor.is_stationary_norm(initial).map_err(FixedPointError::Monitor)? {
        return Ok(FixedPointOutcome { state, iterations: 0, fallbacks: 0 });
    }
    let mut aa = AndersonState::new(depth);
    let mut state = state;
    let mut x = map.project(&state);
    let mut fallbacks = 0;
    let mut pending_fallback = false;
    for it in 1..=max_iterations {
        let plain = map.project(&state);
        let accelerated = x != plain;
        let out = match map.advance(&state, &x) {
            Ok(out) => out,
            Err(_) if accelerated => {
                fallbacks += 1;
                pending_fallback = true;
                x = plain;
                map.advance(&state, &x).map_err(FixedPointError::Step)?
            }
            Err(e) => return Err(FixedPointError::Step(e)),
        };
        let norm = map.residual_norm(&out).map_err(FixedPointError::Step)?;
        map.observe(&out, norm, pending_fallback);
        pending_fallback = false;
        if monitor.is_stationary_norm(norm).map_err(FixedPointError::Monitor)? {
            return Ok(FixedPointOutcome { state: out, iterations: it, fallbacks });
        }
        let g = map.project(&out);
        let mut next = aa.update(&x, &g);
        if next.iter().any(|v| !(*v > 0.0)) {
            fallbacks += 1;
            pending_fallback = true;
            next = g;
        }
        state = out;
        x = next;
    }
    Err(FixedPointError::MaxIterations(max_iterations))
}
