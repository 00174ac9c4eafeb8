//! Hyperelastic and porous energies of the solid-fluid mixture.
//!
//! Mechanical energy (Usyk type with a volumetric penalty):
//! `Psi_M = C (exp(Q) - 1) + s_v (B/2) (J - 1) ln J`, where
//! `Q = sum_ab b_ab Ebar'_ab^2`, `Ebar' = R^T Ebar R` is the isochoric Green
//! strain in the fiber frame `R = [f s n]` and `Fbar = J^{-1/3} F`.
//! `s_v` is the volumetric scale factor (1 gives the plain `B/2` penalty).
//!
//! Porous energy derivative: `q1 exp(q3 phi) + q2 ln(q3 phi)`; the pore
//! pressure is normalized so that it equals `p_ref` at the reference porosity.
//!
//! Every routine is generic over [`Scalar`] so that kernels can be
//! differentiated with dual numbers. Outside the admissible set (`J <= 0`,
//! `phi <= 0`) the generic routines return NaN; the `try_` wrappers report
//! a typed error instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fe::dual::Scalar;
use crate::tensor::Mat3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("parameter `{name}` = {value} violates {rule}")]
    InvalidParameter { name: &'static str, value: f64, rule: &'static str },
    #[error("deformation gradient has non-positive determinant {0}")]
    NonPositiveJacobian(f64),
    #[error("porosity must be positive, got {0}")]
    PorosityDomain(f64),
}

/// Usyk exponents in the fiber (f), sheet (s), normal (n) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsykCoefficients {
    pub ff: f64,
    pub ss: f64,
    pub nn: f64,
    pub fs: f64,
    pub fn_: f64,
    pub sn: f64,
}

impl UsykCoefficients {
    pub fn uniform(b: f64) -> Self {
        UsykCoefficients { ff: b, ss: b, nn: b, fs: b, fn_: b, sn: b }
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.ff, self.fs, self.fn_], [self.fs, self.ss, self.sn], [self.fn_, self.sn, self.nn]]
    }
}

/// Pressure-driven source `-beta (p - p_source)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePair {
    /// 1/(s Pa)
    pub beta: f64,
    /// Pa
    pub pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Pa
    pub c: f64,
    /// Pa
    pub b: f64,
    /// Multiplier of the volumetric penalty `(B/2)(J-1) ln J`.
    pub volumetric_scale: f64,
    pub usyk: UsykCoefficients,
    /// Rotation of the fiber and sheet directions about `e3`, radians.
    pub fiber_angle: f64,
    /// Pa
    pub q1: f64,
    /// Pa
    pub q2: f64,
    pub q3: f64,
    /// Isotropic permeability, m^2/(s Pa).
    pub k: f64,
    /// kg/m^3
    pub rho_f: f64,
    pub sources: Vec<SourcePair>,
    /// Given (imaged) porosity.
    pub phi_bar: f64,
    /// Pa
    pub p_ref: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            c: 880.0,
            b: 5e4,
            volumetric_scale: 1.0,
            usyk: UsykCoefficients::uniform(1.0),
            fiber_angle: 0.0,
            q1: 1.333,
            q2: 550.0,
            q3: 10.0,
            k: 2e-7,
            rho_f: 1000.0,
            sources: vec![SourcePair { beta: 1e-4, pressure: 1e4 }],
            phi_bar: 0.1,
            p_ref: 0.0,
        }
    }
}

impl MaterialParams {
    /// Sliding-square benchmark parameters: the defaults with the volumetric
    /// penalty doubled and a unit fluid density.
    pub fn benchmark() -> Self {
        MaterialParams { volumetric_scale: 2.0, rho_f: 1.0, ..MaterialParams::default() }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let positive = [
            ("C", self.c),
            ("B", self.b),
            ("q1", self.q1),
            ("q2", self.q2),
            ("q3", self.q3),
            ("k", self.k),
            ("rho_f", self.rho_f),
            ("volumetric_scale", self.volumetric_scale),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConstitutiveError::InvalidParameter { name, value, rule: "value > 0" });
            }
        }
        if !(self.phi_bar > 0.0 && self.phi_bar < 1.0) {
            return Err(ConstitutiveError::InvalidParameter { name: "phi_bar", value: self.phi_bar, rule: "0 < value < 1" });
        }
        let u = &self.usyk;
        let bs = [("b_ff", u.ff), ("b_ss", u.ss), ("b_nn", u.nn), ("b_fs", u.fs), ("b_fn", u.fn_), ("b_sn", u.sn)];
        for (name, value) in bs {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConstitutiveError::InvalidParameter { name, value, rule: "value >= 0" });
            }
        }
        for s in &self.sources {
            if !(s.beta >= 0.0 && s.beta.is_finite()) {
                return Err(ConstitutiveError::InvalidParameter { name: "source_beta", value: s.beta, rule: "value >= 0" });
            }
            if !s.pressure.is_finite() {
                return Err(ConstitutiveError::InvalidParameter { name: "source_pressure", value: s.pressure, rule: "finite" });
            }
        }
        for (name, value) in [("p_ref", self.p_ref), ("fiber_angle", self.fiber_angle)] {
            if !value.is_finite() {
                return Err(ConstitutiveError::InvalidParameter { name, value, rule: "finite" });
            }
        }
        Ok(())
    }

    /// Fiber frame as columns `[f s n]`.
    pub fn fiber_frame(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.fiber_angle.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }
}

/// Deformation gradient with its determinant and inverse transpose.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics<S: Scalar> {
    pub f: Mat3<S>,
    pub j: S,
    pub f_inv_t: Mat3<S>,
}

impl<S: Scalar> Kinematics<S> {
    pub fn new(f: Mat3<S>) -> Self {
        let (f_inv_t, j) = f.inv_transpose_det();
        Kinematics { f, j, f_inv_t }
    }

    /// Plane-strain embedding of a 2x2 (or full 3x3) gradient.
    pub fn from_rows(dim: usize, f: &[[f64; 3]; 3]) -> Self {
        Self::new(Mat3::embed(dim, |i, k| S::cst(f[i][k])))
    }

    /// Isochoric Green strain `Ebar = (Fbar^T Fbar - I)/2`.
    pub fn ebar(&self) -> Mat3<S> {
        let c = self.f.tr_mul(&self.f);
        c.scale(self.j.powf(-2.0 / 3.0)).sub(&Mat3::identity()).scale(S::cst(0.5))
    }
}

fn rotate_to_frame<S: Scalar>(e: &Mat3<S>, r: &[[f64; 3]; 3]) -> Mat3<S> {
    let rm = Mat3::<S>::from_f64(*r);
    rm.tr_mul(&e.mul(&rm))
}

fn q_and_grad<S: Scalar>(kin: &Kinematics<S>, params: &MaterialParams) -> (S, Mat3<S>) {
    let r = params.fiber_frame();
    let ep = rotate_to_frame(&kin.ebar(), &r);
    let b = params.usyk.matrix();
    let mut q = S::zero();
    let mut dq = Mat3::<S>::zeros();
    for a in 0..3 {
        for c in 0..3 {
            let e = ep.get(a, c);
            q += e * e * b[a][c];
            dq.0[a][c] = e * (2.0 * b[a][c]);
        }
    }
    // back to the Cartesian frame: R dQ R^T
    let rm = Mat3::<S>::from_f64(r);
    let dq_cart = rm.mul(&dq).mul(&rm.transpose());
    (q, dq_cart)
}

pub fn psi_m<S: Scalar>(kin: &Kinematics<S>, params: &MaterialParams) -> S {
    let (q, _) = q_and_grad(kin, params);
    let j = kin.j;
    (q.exp() - 1.0) * params.c + (j - 1.0) * j.ln() * (0.5 * params.b * params.volumetric_scale)
}

/// First Piola-Kirchhoff stress `dPsi_M/dF + lambda J F^{-T}`.
pub fn piola<S: Scalar>(kin: &Kinematics<S>, lambda: S, params: &MaterialParams) -> Mat3<S> {
    let (q, dq) = q_and_grad(kin, params);
    let j = kin.j;
    let sbar = dq.scale(q.exp() * params.c);
    let c = kin.f.tr_mul(&kin.f);
    let j23 = j.powf(-2.0 / 3.0);
    let trace_term = sbar.ddot(&c) * (1.0 / 3.0);
    let p_iso = kin.f.mul(&sbar).sub(&kin.f_inv_t.scale(trace_term)).scale(j23);
    let dvol = (j * j.ln() + j - 1.0) * (0.5 * params.b * params.volumetric_scale);
    p_iso.add(&kin.f_inv_t.scale(dvol + lambda * j))
}

/// Raw porous energy derivative `q1 exp(q3 phi) + q2 ln(q3 phi)`.
pub fn dpsi_p<S: Scalar>(phi: S, params: &MaterialParams) -> S {
    (phi * params.q3).exp() * params.q1 + (phi * params.q3).ln() * params.q2
}

pub fn pore_pressure<S: Scalar>(phi: S, phi0: S, lambda: S, params: &MaterialParams) -> S {
    dpsi_p(phi, params) - dpsi_p(phi0, params) - lambda + params.p_ref
}

pub fn pore_pressure_dphi<S: Scalar>(phi: S, params: &MaterialParams) -> S {
    (phi * params.q3).exp() * (params.q1 * params.q3) + phi.recip() * params.q2
}

pub fn try_pore_pressure(phi: f64, phi0: f64, lambda: f64, params: &MaterialParams) -> Result<f64, ConstitutiveError> {
    for v in [phi, phi0] {
        if !(v > 0.0) {
            return Err(ConstitutiveError::PorosityDomain(v));
        }
    }
    Ok(pore_pressure(phi, phi0, lambda, params))
}

pub fn try_pore_pressure_dphi(phi: f64, params: &MaterialParams) -> Result<f64, ConstitutiveError> {
    if !(phi > 0.0) {
        return Err(ConstitutiveError::PorosityDomain(phi));
    }
    Ok(pore_pressure_dphi(phi, params))
}

/// Lagrangian permeability `J F^{-1} k F^{-T}`.
pub fn permeability_pullback<S: Scalar>(kin: &Kinematics<S>, params: &MaterialParams) -> Mat3<S> {
    kin.f_inv_t.tr_mul(&kin.f_inv_t).scale(kin.j * params.k)
}

/// Inverse of [`permeability_pullback`], `F^T F / (k J)`.
pub fn permeability_pullback_inv<S: Scalar>(kin: &Kinematics<S>, params: &MaterialParams) -> Mat3<S> {
    kin.f.tr_mul(&kin.f).scale((kin.j * params.k).recip())
}

pub fn try_permeability_pullback(kin: &Kinematics<f64>, params: &MaterialParams) -> Result<Mat3<f64>, ConstitutiveError> {
    if !(kin.j > 0.0) {
        return Err(ConstitutiveError::NonPositiveJacobian(kin.j));
    }
    Ok(permeability_pullback(kin, params))
}

/// Ramped source `ramp * sum_i -beta_i (p - p_i)`, in 1/s.
pub fn source_theta<S: Scalar>(p: S, ramp: f64, params: &MaterialParams) -> S {
    let mut theta = S::zero();
    for s in &params.sources {
        theta -= (p - s.pressure) * s.beta;
    }
    theta * ramp
}
