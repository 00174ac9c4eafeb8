//! Pointwise kernels of the coupled poroelastic systems and their boundary
//! conditions.
//!
//! Unknowns, in component order: displacement (forward) or inverse
//! displacement (refconf), P2 vector; porosity, P1; multiplier, P1; then
//! either nothing (primal), the pressure variable `mu` in P1 (mixed-p) or
//! the Darcy flux `u` in P2 vector (mixed-u).
//!
//! Forward rows, on the reference domain:
//! - `P(F) : grad d* + lambda J F^{-T} : grad d* - g . d*`
//! - `(J - phi - (1 - phi0)) lambda*`
//! - primal: `(phi - phi_prev)/dt phi* + K grad p . grad phi* - theta/rho_f phi*`
//! - mixed-p: the same row in `mu` (tested by `mu*`), plus `(mu - p) phi*`
//! - mixed-u: `((phi - phi_prev)/dt + div u - theta/rho_f) phi*` and
//!   `K^{-1} u . u* - p div u*`
//!
//! Refconf rows are posed on the current domain with `f = I + grad d`,
//! `F = f^{-1}`, `j = det f`: the stress is `j P(F) F^T + lambda I`, the
//! constraint is `j (1 - phi0) - (1 - phibar)`, the time derivative enters
//! with a minus sign and the permeability is the spatial `k I`. The
//! pressure is `dPsi_P(J phibar) - dPsi_P(phi0) - lambda + p_ref`.
//!
//! In the primal rows the pressure gradient only keeps the porosity and
//! multiplier contributions; the deformation-gradient term it would carry
//! in refconf is dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{
    dpsi_p, permeability_pullback, permeability_pullback_inv, piola, pore_pressure, pore_pressure_dphi, source_theta,
    Kinematics, MaterialParams,
};
use crate::fe::assembly::{PointKernel, QpInput};
use crate::fe::dofmap::{DofMap, FieldSpec};
use crate::fe::dual::Scalar;
use crate::fe::element::Family;
use crate::mesh::{Mesh, Tag};
use crate::tensor::Mat3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Forward,
    Refconf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationKind {
    Primal,
    MixedP,
    MixedU,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 3] = [FormulationKind::Primal, FormulationKind::MixedP, FormulationKind::MixedU];

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::Primal => "primal",
            FormulationKind::MixedP => "mixed_p",
            FormulationKind::MixedU => "mixed_u",
        }
    }
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Forward => "forward",
            ProblemKind::Refconf => "refconf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Displacement,
    Porosity,
    Multiplier,
    Mu,
    Velocity,
}

/// Field layout of one formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub dim: usize,
    pub formulation: FormulationKind,
}

impl Layout {
    pub fn new(dim: usize, formulation: FormulationKind) -> Self {
        Layout { dim, formulation }
    }

    pub fn fields(&self) -> Vec<FieldSpec> {
        let mut f = vec![
            FieldSpec { name: "displacement", family: Family::P2, ncomp: self.dim },
            FieldSpec { name: "porosity", family: Family::P1, ncomp: 1 },
            FieldSpec { name: "lambda", family: Family::P1, ncomp: 1 },
        ];
        match self.formulation {
            FormulationKind::Primal => {}
            FormulationKind::MixedP => f.push(FieldSpec { name: "mu", family: Family::P1, ncomp: 1 }),
            FormulationKind::MixedU => f.push(FieldSpec { name: "velocity", family: Family::P2, ncomp: self.dim }),
        }
        f
    }

    /// Field index inside the dof map, if the formulation has that field.
    pub fn field(&self, kind: FieldKind) -> Option<usize> {
        match (kind, self.formulation) {
            (FieldKind::Displacement, _) => Some(0),
            (FieldKind::Porosity, _) => Some(1),
            (FieldKind::Multiplier, _) => Some(2),
            (FieldKind::Mu, FormulationKind::MixedP) => Some(3),
            (FieldKind::Velocity, FormulationKind::MixedU) => Some(3),
            _ => None,
        }
    }

    pub fn num_components(&self) -> usize {
        self.fields().iter().map(|f| f.ncomp).sum()
    }

    /// Packed-slot width per component.
    fn s(&self) -> usize {
        self.dim + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// Full backward-Euler system.
    Transient,
    /// Steady mass rows only: the time derivative is dropped and every
    /// other row is zero.
    Stationary,
}

/// Coupled kernel. `aux[0]` is the previous state; `aux[1]` carries the
/// given porosity field in the porosity slot (reference porosity `phi0` for
/// the forward problem, imaged porosity `phibar` for the refconf problem).
pub struct PoroKernel<'a> {
    pub problem: ProblemKind,
    pub layout: Layout,
    pub params: &'a MaterialParams,
    pub dt: f64,
    pub ramp: f64,
    pub body_force: [f64; 3],
    pub mode: KernelMode,
}

impl PointKernel for PoroKernel<'_> {
    fn eval<S: Scalar>(&self, qp: &QpInput, z: &[S], out: &mut [S]) {
        let dim = self.layout.dim;
        let s = self.layout.s();
        let prm = self.params;
        let (ip, il, ix) = (dim, dim + 1, dim + 2);
        let val = |c: usize| z[c * s];
        let grad = |c: usize, k: usize| z[c * s + 1 + k];
        let aux_val = |a: usize, c: usize| qp.aux[a][c * s];
        let aux_grad = |a: usize, c: usize, k: usize| qp.aux[a][c * s + 1 + k];
        let transient = self.mode == KernelMode::Transient;

        let h = Mat3::embed(dim, |i, k| grad(i, k) + if i == k { 1.0 } else { 0.0 });
        let phi = val(ip);
        let lambda = val(il);
        let phi_prev = aux_val(0, ip);
        let phi_data = aux_val(1, ip);

        // Kinematics, pressure and permeability of the current problem.
        let (p, perm, perm_inv, grad_p_data, dp_dphi, stress, constraint, time_sign);
        match self.problem {
            ProblemKind::Forward => {
                let kin = Kinematics::new(h);
                p = pore_pressure(phi, S::cst(phi_data), lambda, prm);
                dp_dphi = pore_pressure_dphi(phi, prm);
                let dp0 = pore_pressure_dphi(phi_data, prm);
                grad_p_data = [0, 1, 2].map(|k| S::cst(if k < dim { -dp0 * aux_grad(1, ip, k) } else { 0.0 }));
                perm = permeability_pullback(&kin, prm);
                perm_inv = permeability_pullback_inv(&kin, prm);
                stress = if transient { Some(piola(&kin, lambda, prm)) } else { None };
                constraint = kin.j - phi - (1.0 - phi_data);
                time_sign = 1.0;
            }
            ProblemKind::Refconf => {
                let (big_f_t, j) = h.inv_transpose_det();
                let big_j = j.recip();
                let phi_l = big_j * phi_data;
                p = dpsi_p(phi_l, prm) - dpsi_p(phi, prm) - lambda + prm.p_ref;
                dp_dphi = -pore_pressure_dphi(phi, prm);
                let dpl = pore_pressure_dphi(phi_l, prm) * big_j;
                grad_p_data = [0, 1, 2].map(|k| if k < dim { dpl * aux_grad(1, ip, k) } else { S::zero() });
                perm = Mat3::identity().scale(S::cst(prm.k));
                perm_inv = Mat3::identity().scale(S::cst(1.0 / prm.k));
                stress = if transient {
                    let kin = Kinematics::new(big_f_t.transpose());
                    let pk = piola(&kin, S::zero(), prm);
                    let sigma = pk.mul(&big_f_t).scale(j);
                    Some(sigma.add(&Mat3::identity().scale(lambda)))
                } else {
                    None
                };
                constraint = j - j * phi - (1.0 - phi_data);
                time_sign = -1.0;
            }
        }
        let theta = source_theta(p, self.ramp, prm) * (1.0 / prm.rho_f);
        let time = if transient { (phi - phi_prev) * (time_sign / self.dt) } else { S::zero() };

        if let Some(stress) = stress {
            for i in 0..dim {
                out[i * s] = S::cst(-self.body_force[i]);
                for k in 0..dim {
                    out[i * s + 1 + k] = stress.get(i, k);
                }
            }
            out[il * s] = constraint;
        }

        match self.layout.formulation {
            FormulationKind::Primal => {
                let gp: Vec<S> = (0..dim).map(|k| dp_dphi * grad(ip, k) - grad(il, k) + grad_p_data[k]).collect();
                out[ip * s] = time - theta;
                for i in 0..dim {
                    let mut flux = S::zero();
                    for k in 0..dim {
                        flux += perm.get(i, k) * gp[k];
                    }
                    out[ip * s + 1 + i] = flux;
                }
            }
            FormulationKind::MixedP => {
                let im = ix;
                out[im * s] = time - theta;
                for i in 0..dim {
                    let mut flux = S::zero();
                    for k in 0..dim {
                        flux += perm.get(i, k) * grad(im, k);
                    }
                    out[im * s + 1 + i] = flux;
                }
                if transient {
                    out[ip * s] = val(im) - p;
                }
            }
            FormulationKind::MixedU => {
                let mut div = S::zero();
                for k in 0..dim {
                    div += grad(ix + k, k);
                }
                out[ip * s] = time + div - theta;
                if transient {
                    for c in 0..dim {
                        let mut ku = S::zero();
                        for k in 0..dim {
                            ku += perm_inv.get(c, k) * val(ix + k);
                        }
                        out[(ix + c) * s] = ku;
                        out[(ix + c) * s + 1 + c] = -p;
                    }
                }
            }
        }
    }
}

/// Row scaling used for Newton norms: every row becomes dimensionless.
pub fn row_scaling(mesh: &Mesh, dofmap: &DofMap, layout: Layout, params: &MaterialParams, dt: f64) -> Vec<f64> {
    let h = mesh.mean_cell_size();
    let measure = mesh.total_volume() / mesh.num_cells() as f64;
    let mut scale = vec![0.0; dofmap.len()];
    let mut set = |kind: FieldKind, v: f64| {
        if let Some(f) = layout.field(kind) {
            for i in dofmap.range(f) {
                scale[i] = v / measure;
            }
        }
    };
    set(FieldKind::Displacement, h / params.b);
    set(FieldKind::Multiplier, 1.0);
    match layout.formulation {
        FormulationKind::Primal => set(FieldKind::Porosity, dt),
        FormulationKind::MixedP => {
            set(FieldKind::Porosity, 1.0 / params.b);
            set(FieldKind::Mu, dt);
        }
        FormulationKind::MixedU => {
            set(FieldKind::Porosity, dt);
            set(FieldKind::Velocity, h / params.b);
        }
    }
    scale
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcError {
    #[error("field {0:?} is not part of the {1:?} formulation")]
    MissingField(FieldKind, FormulationKind),
    #[error("component {component} out of range for field {field:?}")]
    BadComponent { field: FieldKind, component: usize },
    #[error("tag {0} does not exist in a {1}D mesh")]
    MissingTag(Tag, usize),
    #[error("({tag}, {field:?}, {component}) specified twice")]
    Duplicate { tag: Tag, field: FieldKind, component: usize },
    #[error("dof {dof} constrained to both {a} and {b}")]
    Conflict { dof: usize, a: f64, b: f64 },
    #[error("normal-flux condition on {0} needs an axis-aligned boundary")]
    NotAxisAligned(Tag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletBc {
    pub tag: Tag,
    pub field: FieldKind,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub dirichlet: Vec<DirichletBc>,
}

impl BoundarySpec {
    /// Sliding supports on the minimum planes; the body is otherwise
    /// traction free and isolated (no fluid exchange through the boundary).
    pub fn sliding(dim: usize, formulation: FormulationKind) -> Self {
        let mins = [Tag::XMin, Tag::YMin, Tag::ZMin];
        let mut dirichlet: Vec<DirichletBc> = (0..dim)
            .map(|a| DirichletBc { tag: mins[a], field: FieldKind::Displacement, component: a, value: 0.0 })
            .collect();
        if formulation == FormulationKind::MixedU {
            for tag in Tag::ALL.into_iter().filter(|t| t.axis() < dim) {
                dirichlet.push(DirichletBc { tag, field: FieldKind::Velocity, component: tag.axis(), value: 0.0 });
            }
        }
        BoundarySpec { dirichlet }
    }
}

/// Constrained dofs with their prescribed values, sorted by dof.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl Constraints {
    pub fn lift(&self, x: &mut [f64]) {
        for (&d, &v) in self.dofs.iter().zip(&self.values) {
            x[d] = v;
        }
    }
}

pub fn apply_bcs(spec: &BoundarySpec, layout: Layout, mesh: &Mesh, dofmap: &DofMap) -> Result<Constraints, BcError> {
    let mut seen = std::collections::HashSet::new();
    let mut map: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for bc in &spec.dirichlet {
        let field = layout.field(bc.field).ok_or(BcError::MissingField(bc.field, layout.formulation))?;
        let fs = &dofmap.fields()[field];
        if bc.component >= fs.ncomp {
            return Err(BcError::BadComponent { field: bc.field, component: bc.component });
        }
        if bc.tag.axis() >= mesh.dim() {
            return Err(BcError::MissingTag(bc.tag, mesh.dim()));
        }
        if !seen.insert((bc.tag, bc.field, bc.component)) {
            return Err(BcError::Duplicate { tag: bc.tag, field: bc.field, component: bc.component });
        }
        if bc.field == FieldKind::Velocity {
            for (i, f) in mesh.boundary_facets() {
                if f.tag == Some(bc.tag) {
                    let n = mesh.facet_normal(i).expect("boundary facet");
                    if (n[bc.tag.axis()].abs() - 1.0).abs() > 1e-10 || bc.component != bc.tag.axis() {
                        return Err(BcError::NotAxisAligned(bc.tag));
                    }
                }
            }
        }
        for node in dofmap.boundary_nodes(mesh, fs.family, bc.tag) {
            let dof = dofmap.global(field, bc.component, node);
            if let Some(&old) = map.get(&dof) {
                if old != bc.value {
                    return Err(BcError::Conflict { dof, a: old, b: bc.value });
                }
            }
            map.insert(dof, bc.value);
        }
    }
    Ok(Constraints { dofs: map.keys().copied().collect(), values: map.values().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::assembly::{Assembler, AssemblyOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> MaterialParams {
        MaterialParams { volumetric_scale: 2.0, rho_f: 1.0, ..MaterialParams::default() }
    }

    struct Setup {
        asm: Assembler,
        layout: Layout,
    }

    fn setup(mesh: Mesh, formulation: FormulationKind) -> Setup {
        let layout = Layout::new(mesh.dim(), formulation);
        let dm = DofMap::new(&mesh, layout.fields());
        let asm = Assembler::new(&mesh, dm, 6).unwrap();
        Setup { asm, layout }
    }

    fn fill(s: &Setup, x: &mut [f64], kind: FieldKind, mut f: impl FnMut(usize, usize) -> f64) {
        if let Some(fi) = s.layout.field(kind) {
            let dm = s.asm.dofmap();
            for c in 0..dm.fields()[fi].ncomp {
                for n in 0..dm.num_nodes(fi) {
                    x[dm.global(fi, c, n)] = f(c, n);
                }
            }
        }
    }

    fn uniform_state(s: &Setup, phi: f64, lambda: f64) -> Vec<f64> {
        let mut x = vec![0.0; s.asm.len()];
        fill(s, &mut x, FieldKind::Porosity, |_, _| phi);
        fill(s, &mut x, FieldKind::Multiplier, |_, _| lambda);
        x
    }

    #[allow(clippy::too_many_arguments)]
    fn residual(s: &Setup, problem: ProblemKind, x: &[f64], prev: &[f64], data: &[f64], prm: &MaterialParams, ramp: f64, mode: KernelMode) -> Vec<f64> {
        let k = PoroKernel { problem, layout: s.layout, params: prm, dt: 0.01, ramp, body_force: [0.0; 3], mode };
        let mut r = vec![0.0; s.asm.len()];
        let opts = AssemblyOptions { row_scaling: false, constraints: false };
        s.asm.assemble(&k, x, &[prev, data], &mut r, None, opts).unwrap();
        r
    }

    fn block<'a>(s: &Setup, r: &'a [f64], kind: FieldKind) -> &'a [f64] {
        &r[s.asm.dofmap().range(s.layout.field(kind).unwrap())]
    }

    /// Integral of each basis function of a P1 field.
    fn p1_mass(s: &Setup) -> Vec<f64> {
        let mut m = vec![0.0; s.asm.mesh().num_vertices()];
        let mesh = s.asm.mesh();
        for c in 0..mesh.num_cells() {
            for &v in mesh.cell(c) {
                m[v] += mesh.cell_volume(c) / (mesh.dim() + 1) as f64;
            }
        }
        m
    }

    #[test]
    fn rest_state_gives_zero_rows() {
        let prm = params();
        for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
            for f in FormulationKind::ALL {
                let s = setup(Mesh::build_unit_square(2, 2, 0.01).unwrap(), f);
                let mut x = uniform_state(&s, 0.1, 0.0);
                if f == FormulationKind::MixedP {
                    fill(&s, &mut x, FieldKind::Mu, |_, _| 0.0);
                }
                let data = uniform_state(&s, 0.1, 0.0);
                let r = residual(&s, problem, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
                assert!(r.iter().all(|v| v.abs() < 1e-14), "{problem:?} {f:?}");
            }
        }
    }

    #[test]
    fn multiplier_only_state_gives_divergence_rows() {
        let prm = params();
        let c = 7.0;
        for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
            let s = setup(Mesh::build_unit_square(2, 2, 1.0).unwrap(), FormulationKind::Primal);
            let x = uniform_state(&s, 0.1, c);
            let data = uniform_state(&s, 0.1, 0.0);
            let r = residual(&s, problem, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
            // c * int div d*: for component 0, int dN_a/dx = boundary flux of N_a
            let dm = s.asm.dofmap();
            let pts = dm.node_coords(s.asm.mesh(), Family::P2);
            let mut expect = vec![0.0; dm.num_nodes(0)];
            // integral of dN/dx over the square equals int_{x=1} N - int_{x=0} N;
            // for P2 on a segment of length 1/2: vertex 1/12, midpoint 1/3 each
            let mesh = s.asm.mesh();
            for (tag, sign) in [(Tag::XMax, 1.0), (Tag::XMin, -1.0)] {
                for f in mesh.facets_with_tag(tag) {
                    let (a, b) = (f.vertices[0], f.vertices[1]);
                    let e = mesh.num_vertices() + mesh.edge_between(a, b).unwrap();
                    expect[a] += sign * c * 0.5 / 6.0;
                    expect[b] += sign * c * 0.5 / 6.0;
                    expect[e] += sign * c * 0.5 * 2.0 / 3.0;
                }
            }
            let rows = &block(&s, &r, FieldKind::Displacement)[..dm.num_nodes(0)];
            for n in 0..rows.len() {
                assert!((rows[n] - expect[n]).abs() < 1e-12, "{problem:?} node {n} at {:?}", pts[n]);
            }
        }
    }

    #[test]
    fn incompressibility_offset() {
        let prm = params();
        let s = setup(Mesh::build_unit_square(2, 2, 1.0).unwrap(), FormulationKind::Primal);
        let x = uniform_state(&s, 0.15, 0.0);
        let data = uniform_state(&s, 0.1, 0.0);
        let r = residual(&s, ProblemKind::Forward, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
        let m = p1_mass(&s);
        for (v, w) in block(&s, &r, FieldKind::Multiplier).iter().zip(&m) {
            assert!((v + 0.05 * w).abs() < 1e-14);
        }
        // Eulerian constraint vanishes at rest
        let x = uniform_state(&s, 0.1, 0.0);
        let r = residual(&s, ProblemKind::Refconf, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
        assert!(block(&s, &r, FieldKind::Multiplier).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn one_cell_time_term() {
        let prm = params();
        let s = setup(Mesh::build_unit_square(1, 1, 1.0).unwrap(), FormulationKind::Primal);
        let x = uniform_state(&s, 0.11, 0.0);
        let prev = uniform_state(&s, 0.1, 0.0);
        // set phi_data = phi so the pressure is uniform and theta is zero with ramp 0
        let data = uniform_state(&s, 0.11, 0.0);
        let r = residual(&s, ProblemKind::Forward, &x, &prev, &data, &prm, 0.0, KernelMode::Transient);
        let m = p1_mass(&s);
        for (v, w) in block(&s, &r, FieldKind::Porosity).iter().zip(&m) {
            assert!((v - (0.01 / 0.01) * w).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_p_offset_rows() {
        let prm = params();
        let s = setup(Mesh::build_unit_square(2, 2, 1.0).unwrap(), FormulationKind::MixedP);
        let mut x = uniform_state(&s, 0.1, 0.0);
        fill(&s, &mut x, FieldKind::Mu, |_, _| 3.0);
        let data = uniform_state(&s, 0.1, 0.0);
        let r = residual(&s, ProblemKind::Forward, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
        let m = p1_mass(&s);
        for (v, w) in block(&s, &r, FieldKind::Porosity).iter().zip(&m) {
            assert!((v - 3.0 * w).abs() < 1e-13);
        }
        assert!(block(&s, &r, FieldKind::Mu).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mixed_u_constant_flux_is_divergence_free() {
        let prm = params();
        let s = setup(Mesh::build_unit_square(2, 2, 1.0).unwrap(), FormulationKind::MixedU);
        let mut x = uniform_state(&s, 0.1, 0.0);
        fill(&s, &mut x, FieldKind::Velocity, |c, _| if c == 0 { 1e-3 } else { -2e-3 });
        let data = uniform_state(&s, 0.1, 0.0);
        let r = residual(&s, ProblemKind::Forward, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
        assert!(block(&s, &r, FieldKind::Porosity).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn equilibrium_zeroes_stationary_rows_in_every_formulation() {
        // p == p_a everywhere: theta = 0 and no gradient
        let prm = params();
        for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
            for f in FormulationKind::ALL {
                let s = setup(Mesh::build_unit_square(2, 2, 0.01).unwrap(), f);
                let lambda = -1e4;
                let mut x = uniform_state(&s, 0.1, lambda);
                if f == FormulationKind::MixedP {
                    fill(&s, &mut x, FieldKind::Mu, |_, _| 1e4);
                }
                let data = uniform_state(&s, 0.1, 0.0);
                let r = residual(&s, problem, &x, &x, &data, &prm, 1.0, KernelMode::Stationary);
                assert!(r.iter().all(|v| v.abs() < 1e-15), "{problem:?} {f:?}");
            }
        }
    }

    #[test]
    fn stationary_rows_of_linear_pressure() {
        // refconf on a strip: phi0 uniform, lambda = -x gives p = x + const
        let prm = params();
        let s = setup(Mesh::build_rectangle(2, 1, [2.0, 1.0]).unwrap(), FormulationKind::Primal);
        let mut x = uniform_state(&s, 0.1, 0.0);
        let pts = s.asm.dofmap().node_coords(s.asm.mesh(), Family::P1);
        fill(&s, &mut x, FieldKind::Multiplier, |_, n| -pts[n][0]);
        let data = uniform_state(&s, 0.1, 0.0);
        let r = residual(&s, ProblemKind::Refconf, &x, &x, &data, &prm, 0.0, KernelMode::Stationary);
        // k * int dN_i/dx: boundary values only, +-k/2 * (length 1)/2 per vertex
        for (v, p) in block(&s, &r, FieldKind::Porosity).iter().zip(&pts) {
            let expect = if p[0] == 0.0 {
                -prm.k * 0.5
            } else if p[0] == 2.0 {
                prm.k * 0.5
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-20, "{v} vs {expect} at {p:?}");
        }
    }

    fn random_state(s: &Setup, problem: ProblemKind, rng: &mut ChaCha8Rng, side: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; s.asm.len()];
        let dp = 0.02 * side;
        fill(s, &mut x, FieldKind::Displacement, |_, _| rng.random_range(-dp..dp));
        fill(s, &mut x, FieldKind::Porosity, |_, _| rng.random_range(0.05..0.15));
        fill(s, &mut x, FieldKind::Multiplier, |_, _| rng.random_range(-500.0..500.0));
        fill(s, &mut x, FieldKind::Mu, |_, _| rng.random_range(-500.0..500.0));
        fill(s, &mut x, FieldKind::Velocity, |_, _| rng.random_range(-1e-5..1e-5));
        let mut prev = x.clone();
        fill(s, &mut prev, FieldKind::Porosity, |_, _| rng.random_range(0.05..0.15));
        let mut data = vec![0.0; s.asm.len()];
        let lo = if problem == ProblemKind::Forward { 0.05 } else { 0.1 };
        fill(s, &mut data, FieldKind::Porosity, |_, _| rng.random_range(lo..0.15));
        (x, prev, data)
    }

    fn fd_error(s: &Setup, problem: ProblemKind, x: &[f64], prev: &[f64], data: &[f64]) -> f64 {
        let prm = params();
        let k = PoroKernel { problem, layout: s.layout, params: &prm, dt: 0.01, ramp: 0.7, body_force: [0.0, -3.0, 1.0], mode: KernelMode::Transient };
        let n = s.asm.len();
        let opts = AssemblyOptions { row_scaling: true, constraints: false };
        let mut asm_scaled = Setup { asm: Assembler::new(s.asm.mesh(), s.asm.dofmap().clone(), 6).unwrap(), layout: s.layout };
        asm_scaled.asm.set_row_scale(row_scaling(s.asm.mesh(), s.asm.dofmap(), s.layout, &prm, 0.01));
        let a = &asm_scaled.asm;
        let mut r = vec![0.0; n];
        let mut jac = a.pattern();
        a.assemble(&k, x, &[prev, data], &mut r, Some(&mut jac), opts).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1e-3);
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            let (mut rp, mut rm) = (vec![0.0; n], vec![0.0; n]);
            a.assemble(&k, &xp, &[prev, data], &mut rp, None, opts).unwrap();
            a.assemble(&k, &xm, &[prev, data], &mut rm, None, opts).unwrap();
            // compare in units of the column scale so all fields weigh alike
            let col = x[j].abs().max(1e-3);
            for i in 0..n {
                let fd = (rp[i] - rm[i]) / (2.0 * h) * col;
                num += (fd - jac.get(i, j) * col).powi(2);
                den += fd * fd;
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for mesh in [Mesh::build_unit_square(1, 1, 1.0).unwrap(), Mesh::build_unit_square(2, 2, 1.0).unwrap()] {
            for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
                for f in FormulationKind::ALL {
                    let s = setup(mesh.clone(), f);
                    let (x, prev, data) = random_state(&s, problem, &mut rng, 1.0);
                    let e = fd_error(&s, problem, &x, &prev, &data);
                    assert!(e < 1e-5, "{problem:?} {f:?}: {e}");
                }
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mesh = Mesh::build_slab(1, 1, 1, [1.0; 3]).unwrap();
        for problem in [ProblemKind::Forward, ProblemKind::Refconf] {
            for f in FormulationKind::ALL {
                let s = setup(mesh.clone(), f);
                let (x, prev, data) = random_state(&s, problem, &mut rng, 1.0);
                let e = fd_error(&s, problem, &x, &prev, &data);
                assert!(e < 1e-5, "{problem:?} {f:?}: {e}");
            }
        }
    }

    #[test]
    fn boundary_conditions() {
        let mesh = Mesh::build_unit_square(2, 2, 1.0).unwrap();
        let layout = Layout::new(2, FormulationKind::Primal);
        let dm = DofMap::new(&mesh, layout.fields());
        let c = apply_bcs(&BoundarySpec::sliding(2, FormulationKind::Primal), layout, &mesh, &dm).unwrap();
        assert_eq!(c.dofs.len(), 10);
        let x_dofs = c.dofs.iter().filter(|&&d| d < dm.num_nodes(0)).count();
        assert_eq!(x_dofs, 5);
        // no porosity dofs constrained in the primal formulation
        assert!(c.dofs.iter().all(|d| !dm.range(1).contains(d)));

        let layout = Layout::new(2, FormulationKind::MixedU);
        let dm = DofMap::new(&mesh, layout.fields());
        let c = apply_bcs(&BoundarySpec::sliding(2, FormulationKind::MixedU), layout, &mesh, &dm).unwrap();
        let vel: Vec<usize> = c.dofs.iter().copied().filter(|d| dm.range(3).contains(d)).collect();
        // 4 sides x 5 P2 nodes, one normal component each
        assert_eq!(vel.len(), 20);

        let mut dup = BoundarySpec::sliding(2, FormulationKind::Primal);
        dup.dirichlet.push(dup.dirichlet[0]);
        assert!(matches!(apply_bcs(&dup, layout, &mesh, &dm), Err(BcError::Duplicate { .. })));
        let conflict = BoundarySpec {
            dirichlet: vec![
                DirichletBc { tag: Tag::XMin, field: FieldKind::Displacement, component: 1, value: 0.0 },
                DirichletBc { tag: Tag::YMin, field: FieldKind::Displacement, component: 1, value: 1.0 },
            ],
        };
        assert!(matches!(apply_bcs(&conflict, layout, &mesh, &dm), Err(BcError::Conflict { .. })));
        let wrong = BoundarySpec { dirichlet: vec![DirichletBc { tag: Tag::XMin, field: FieldKind::Mu, component: 0, value: 0.0 }] };
        assert!(matches!(apply_bcs(&wrong, layout, &mesh, &dm), Err(BcError::MissingField(..))));
        let skew = mesh.warped(&mesh.coords().iter().map(|p| [0.1 * p[1], 0.0, 0.0]).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            apply_bcs(&BoundarySpec::sliding(2, FormulationKind::MixedU), layout, &skew, &dm),
            Err(BcError::NotAxisAligned(Tag::XMin))
        ));
    }

    #[test]
    fn mixed_p_interpolated_pressure_is_second_order() {
        let prm = params();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let s = setup(Mesh::build_unit_square(n, n, 1.0).unwrap(), FormulationKind::MixedP);
            let pts = s.asm.dofmap().node_coords(s.asm.mesh(), Family::P1);
            let pi = std::f64::consts::PI;
            let phi = |p: &[f64; 3]| 0.1 + 0.02 * (pi * p[0]).sin() * (pi * p[1]).cos();
            let lam = |p: &[f64; 3]| 300.0 * (p[0] * p[1]).exp();
            let mut x = vec![0.0; s.asm.len()];
            fill(&s, &mut x, FieldKind::Porosity, |_, n| phi(&pts[n]));
            fill(&s, &mut x, FieldKind::Multiplier, |_, n| lam(&pts[n]));
            fill(&s, &mut x, FieldKind::Mu, |_, n| pore_pressure(phi(&pts[n]), 0.1, lam(&pts[n]), &prm));
            let data = uniform_state(&s, 0.1, 0.0);
            let r = residual(&s, ProblemKind::Forward, &x, &x, &data, &prm, 0.0, KernelMode::Transient);
            let m = p1_mass(&s);
            let e = block(&s, &r, FieldKind::Porosity).iter().zip(&m).map(|(v, w)| (v / w).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(slope >= 1.9, "slope {slope} from {errs:?}");
        }
    }

    #[test]
    fn cauchy_and_piola_rows_agree_under_homogeneous_map() {
        let prm = params();
        let f = [[1.08, 0.05, 0.0], [-0.02, 0.93, 0.0], [0.0, 0.0, 1.0]];
        let finv = Mat3::<f64>::from_f64(f).inverse().values();
        let apply = |a: &[[f64; 3]; 3], x: &[f64; 3]| [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * x[k]).sum::<f64>());
        let reference = Mesh::build_unit_square(2, 2, 1.0).unwrap();
        let disp: Vec<[f64; 3]> = reference.coords().iter().map(|x| {
            let y = apply(&f, x);
            [y[0] - x[0], y[1] - x[1], 0.0]
        }).collect();
        let current = reference.warped(&disp).unwrap();
        let lambda = 250.0;

        let sf = setup(reference.clone(), FormulationKind::Primal);
        let pf = sf.asm.dofmap().node_coords(sf.asm.mesh(), Family::P2);
        let mut xf = uniform_state(&sf, 0.1, lambda);
        fill(&sf, &mut xf, FieldKind::Displacement, |c, n| apply(&f, &pf[n])[c] - pf[n][c]);
        let data = uniform_state(&sf, 0.1, 0.0);
        let rf = residual(&sf, ProblemKind::Forward, &xf, &xf, &data, &prm, 0.0, KernelMode::Transient);

        let se = setup(current, FormulationKind::Primal);
        let pe = se.asm.dofmap().node_coords(se.asm.mesh(), Family::P2);
        let mut xe = uniform_state(&se, 0.1, lambda);
        fill(&se, &mut xe, FieldKind::Displacement, |c, n| apply(&finv, &pe[n])[c] - pe[n][c]);
        let re = residual(&se, ProblemKind::Refconf, &xe, &xe, &data, &prm, 0.0, KernelMode::Transient);

        let a = block(&sf, &rf, FieldKind::Displacement);
        let b = block(&se, &re, FieldKind::Displacement);
        let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(scale > 1.0);
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-8 * scale, "{u} vs {v}");
        }
    }

    /// Porosity-porosity block of the transient Jacobian at a uniform state.
    fn porosity_block(problem: ProblemKind) -> nalgebra::DMatrix<f64> {
        let prm = params();
        let s = setup(Mesh::build_unit_square(3, 3, 1.0).unwrap(), FormulationKind::Primal);
        let x = uniform_state(&s, 0.1, 0.0);
        let k = PoroKernel { problem, layout: s.layout, params: &prm, dt: 0.01, ramp: 0.0, body_force: [0.0; 3], mode: KernelMode::Transient };
        let mut r = vec![0.0; s.asm.len()];
        let mut jac = s.asm.pattern();
        let opts = AssemblyOptions { row_scaling: false, constraints: false };
        s.asm.assemble(&k, &x, &[&x, &x], &mut r, Some(&mut jac), opts).unwrap();
        let range = s.asm.dofmap().range(1);
        let n = range.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| jac.get(range.start + i, range.start + j))
    }

    #[test]
    fn refconf_porosity_operator_is_a_forward_heat_equation() {
        // both problems give a definite operator; refconf has the
        // overall minus sign, so -J is positive definite
        let fwd = porosity_block(ProblemKind::Forward);
        let back = porosity_block(ProblemKind::Refconf);
        assert!((&fwd - fwd.transpose()).amax() < 1e-12 * fwd.amax());
        let ef = fwd.symmetric_eigen().eigenvalues;
        let eb = (-back).symmetric_eigen().eigenvalues;
        assert!(ef.iter().all(|&l| l > 0.0), "{ef}");
        assert!(eb.iter().all(|&l| l > 0.0), "{eb}");
    }
}
