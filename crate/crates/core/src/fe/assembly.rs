//! Cell-wise assembly of residuals and Jacobians from pointwise kernels.
//!
//! A kernel sees, at each quadrature point, the packed array `z` holding for
//! every field component its value followed by its `dim` spatial
//! derivatives. It writes `out` in the same layout: the coefficient of the
//! test function value, then the coefficients of the test gradient. The
//! residual row of basis function `N_a` of component `c` is
//! `sum_q w_q (out_c0 N_a + sum_k out_ck dN_a/dx_k)`.
//!
//! Tangents come from running the kernel on dual numbers seeded on `z` and
//! chaining with the basis functions.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::mesh::Mesh;

use super::dofmap::DofMap;
use super::dual::{Dual, Scalar};
use super::element::{CellGeometry, Family, ReferenceElement};
use super::quadrature::{quadrature, QuadratureRule};
use super::sparse::CsrMatrix;
use super::FeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("non-finite kernel output in cell {cell}")]
    NonFinite { cell: usize },
    #[error("state has {got} entries, dof map expects {expected}")]
    StateLength { got: usize, expected: usize },
    #[error("unsupported kernel width {0}")]
    UnsupportedWidth(usize),
}

/// Data available to a kernel at one quadrature point.
pub struct QpInput<'a> {
    pub cell: usize,
    pub x: [f64; 3],
    /// Auxiliary vectors interpolated in the same packed layout as `z`.
    pub aux: &'a [Vec<f64>],
}

pub trait PointKernel {
    fn eval<S: Scalar>(&self, qp: &QpInput, z: &[S], out: &mut [S]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub row_scaling: bool,
    pub constraints: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { row_scaling: true, constraints: true }
    }
}

/// Per-component layout inside a cell.
#[derive(Debug, Clone)]
struct Component {
    family: Family,
    local_offset: usize,
    nodes: usize,
}

pub struct Assembler {
    mesh: Mesh,
    dofmap: DofMap,
    rule: QuadratureRule,
    components: Vec<Component>,
    cell_ndofs: usize,
    /// Physical basis gradients, laid out as `[cell][qp][node]`.
    grads_p1: Vec<[f64; 3]>,
    grads_p2: Vec<[f64; 3]>,
    values_p1: ReferenceElement,
    values_p2: ReferenceElement,
    weights: Vec<f64>,
    points: Vec<[f64; 3]>,
    cell_dofs: Vec<usize>,
    pattern: CsrMatrix,
    slots: Vec<usize>,
    row_scale: Vec<f64>,
    constrained: Vec<bool>,
}

impl Assembler {
    pub fn new(mesh: &Mesh, dofmap: DofMap, degree: usize) -> Result<Self, FeError> {
        let dim = mesh.dim();
        let rule = quadrature(dim, degree)?;
        let values_p1 = ReferenceElement::tabulate(Family::P1, dim, &rule);
        let values_p2 = ReferenceElement::tabulate(Family::P2, dim, &rule);
        let mut components = Vec::new();
        let mut off = 0;
        for f in dofmap.fields() {
            let nodes = f.family.num_nodes(dim);
            for _ in 0..f.ncomp {
                components.push(Component { family: f.family, local_offset: off, nodes });
                off += nodes;
            }
        }
        let cell_ndofs = off;
        let nq = rule.len();
        let ncells = mesh.num_cells();
        let (n1, n2) = (Family::P1.num_nodes(dim), Family::P2.num_nodes(dim));
        let mut grads_p1 = Vec::with_capacity(ncells * nq * n1);
        let mut grads_p2 = Vec::with_capacity(ncells * nq * n2);
        let mut weights = Vec::with_capacity(ncells * nq);
        let mut points = Vec::with_capacity(ncells * nq);
        let mut cell_dofs = Vec::with_capacity(ncells * cell_ndofs);
        let mut buf = Vec::new();
        for c in 0..ncells {
            let geo = CellGeometry::new(mesh, c);
            for q in 0..nq {
                weights.push(rule.weights[q] * geo.det);
                points.push(geo.map(&rule.points[q]));
                grads_p1.extend(values_p1.grads[q].iter().map(|g| geo.physical_grad(g)));
                grads_p2.extend(values_p2.grads[q].iter().map(|g| geo.physical_grad(g)));
            }
            dofmap.cell_dofs(c, &mut buf);
            cell_dofs.extend_from_slice(&buf);
        }
        let n = dofmap.len();
        let mut rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for c in 0..ncells {
            let dofs = &cell_dofs[c * cell_ndofs..(c + 1) * cell_ndofs];
            for &i in dofs {
                rows[i].extend(dofs.iter().copied());
            }
        }
        let rows: Vec<Vec<usize>> = rows.into_iter().map(|s| s.into_iter().collect()).collect();
        let pattern = CsrMatrix::from_pattern(&rows);
        let mut slots = Vec::with_capacity(ncells * cell_ndofs * cell_ndofs);
        for c in 0..ncells {
            let dofs = &cell_dofs[c * cell_ndofs..(c + 1) * cell_ndofs];
            for &i in dofs {
                for &j in dofs {
                    slots.push(pattern.slot(i, j).expect("pattern covers cell couplings"));
                }
            }
        }
        Ok(Assembler {
            mesh: mesh.clone(),
            dofmap,
            rule,
            components,
            cell_ndofs,
            grads_p1,
            grads_p2,
            values_p1,
            values_p2,
            weights,
            points,
            cell_dofs,
            pattern,
            slots,
            row_scale: vec![1.0; n],
            constrained: vec![false; n],
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn len(&self) -> usize {
        self.dofmap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofmap.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Zero-valued matrix with the assembly sparsity pattern.
    pub fn pattern(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    pub fn set_row_scale(&mut self, scale: Vec<f64>) {
        assert_eq!(scale.len(), self.len());
        self.row_scale = scale;
    }

    pub fn row_scale(&self) -> &[f64] {
        &self.row_scale
    }

    pub fn set_constrained(&mut self, dofs: &[usize]) {
        self.constrained = vec![false; self.len()];
        for &d in dofs {
            self.constrained[d] = true;
        }
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    fn width(&self) -> usize {
        self.components.len() * (self.mesh.dim() + 1)
    }

    fn basis(&self, family: Family, cell: usize, q: usize) -> (&[f64], &[[f64; 3]]) {
        let nq = self.rule.len();
        let dim = self.mesh.dim();
        let n = family.num_nodes(dim);
        let base = (cell * nq + q) * n;
        match family {
            Family::P1 => (&self.values_p1.values[q], &self.grads_p1[base..base + n]),
            Family::P2 => (&self.values_p2.values[q], &self.grads_p2[base..base + n]),
        }
    }

    /// Packed values and gradients of a global vector at one quadrature point.
    fn interpolate(&self, v: &[f64], cell: usize, q: usize, out: &mut [f64]) {
        let dim = self.mesh.dim();
        let dofs = &self.cell_dofs[cell * self.cell_ndofs..(cell + 1) * self.cell_ndofs];
        for (ci, comp) in self.components.iter().enumerate() {
            let (vals, grads) = self.basis(comp.family, cell, q);
            let slot = &mut out[ci * (dim + 1)..(ci + 1) * (dim + 1)];
            slot.iter_mut().for_each(|s| *s = 0.0);
            for a in 0..comp.nodes {
                let coef = v[dofs[comp.local_offset + a]];
                slot[0] += coef * vals[a];
                for k in 0..dim {
                    slot[1 + k] += coef * grads[a][k];
                }
            }
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<(), AssemblyError> {
        if v.len() != self.len() {
            return Err(AssemblyError::StateLength { got: v.len(), expected: self.len() });
        }
        Ok(())
    }

    /// Integral over the mesh of a function of the packed state.
    pub fn integrate(&self, x: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<f64, AssemblyError> {
        self.check_len(x)?;
        let nq = self.rule.len();
        let mut z = vec![0.0; self.width()];
        let mut total = 0.0;
        for c in 0..self.mesh.num_cells() {
            for q in 0..nq {
                self.interpolate(x, c, q, &mut z);
                total += self.weights[c * nq + q] * f(&z);
            }
        }
        Ok(total)
    }

    /// Maximum over quadrature points of `|f(z) - f(z_first)|`, a uniformity probe.
    pub fn max_deviation(&self, x: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<f64, AssemblyError> {
        self.check_len(x)?;
        let nq = self.rule.len();
        let mut z = vec![0.0; self.width()];
        let mut reference = None;
        let mut dev: f64 = 0.0;
        for c in 0..self.mesh.num_cells() {
            for q in 0..nq {
                self.interpolate(x, c, q, &mut z);
                let v = f(&z);
                let r = *reference.get_or_insert(v);
                dev = dev.max((v - r).abs());
            }
        }
        Ok(dev)
    }

    /// Residual (and optionally Jacobian) of `kernel` at state `x`. `aux`
    /// vectors share the dof layout of `x` and are interpolated for the kernel.
    pub fn assemble<K: PointKernel>(
        &self,
        kernel: &K,
        x: &[f64],
        aux: &[&[f64]],
        r: &mut [f64],
        jac: Option<&mut CsrMatrix>,
        opts: AssemblyOptions,
    ) -> Result<(), AssemblyError> {
        self.check_len(x)?;
        for a in aux {
            self.check_len(a)?;
        }
        assert_eq!(r.len(), self.len());
        r.iter_mut().for_each(|v| *v = 0.0);
        let jac = match jac {
            None => {
                self.assemble_residual(kernel, x, aux, r)?;
                None
            }
            Some(j) => {
                j.zero_values();
                macro_rules! dispatch {
                    ($($n:literal),*) => {
                        match self.width() {
                            $($n => self.assemble_tangent::<K, $n>(kernel, x, aux, r, j)?,)*
                            w => return Err(AssemblyError::UnsupportedWidth(w)),
                        }
                    };
                }
                dispatch!(2, 3, 4, 6, 8, 9, 12, 15, 16, 18, 20, 24, 28, 32);
                Some(j)
            }
        };
        self.finish(r, jac, opts);
        Ok(())
    }

    fn finish(&self, r: &mut [f64], mut jac: Option<&mut CsrMatrix>, opts: AssemblyOptions) {
        if opts.row_scaling {
            for (i, v) in r.iter_mut().enumerate() {
                *v *= self.row_scale[i];
            }
            if let Some(j) = jac.as_deref_mut() {
                for (i, &s) in self.row_scale.iter().enumerate() {
                    j.scale_row(i, s);
                }
            }
        }
        if opts.constraints {
            for (i, &c) in self.constrained.iter().enumerate() {
                if c {
                    r[i] = 0.0;
                    if let Some(j) = jac.as_deref_mut() {
                        j.set_identity_row(i);
                    }
                }
            }
        }
    }

    fn local_aux(&self, aux: &[&[f64]], cell: usize, q: usize, buf: &mut [Vec<f64>]) {
        for (a, b) in aux.iter().zip(buf.iter_mut()) {
            self.interpolate(a, cell, q, b);
        }
    }

    fn assemble_residual<K: PointKernel>(&self, kernel: &K, x: &[f64], aux: &[&[f64]], r: &mut [f64]) -> Result<(), AssemblyError> {
        let dim = self.mesh.dim();
        let w = self.width();
        let nq = self.rule.len();
        let mut z = vec![0.0; w];
        let mut out = vec![0.0; w];
        let mut auxbuf = vec![vec![0.0; w]; aux.len()];
        let mut re = vec![0.0; self.cell_ndofs];
        for c in 0..self.mesh.num_cells() {
            re.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..nq {
                self.interpolate(x, c, q, &mut z);
                self.local_aux(aux, c, q, &mut auxbuf);
                let input = QpInput { cell: c, x: self.points[c * nq + q], aux: &auxbuf };
                out.iter_mut().for_each(|v| *v = 0.0);
                kernel.eval::<f64>(&input, &z, &mut out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(AssemblyError::NonFinite { cell: c });
                }
                let wq = self.weights[c * nq + q];
                for (ci, comp) in self.components.iter().enumerate() {
                    let (vals, grads) = self.basis(comp.family, c, q);
                    let o = &out[ci * (dim + 1)..(ci + 1) * (dim + 1)];
                    for a in 0..comp.nodes {
                        let mut s = o[0] * vals[a];
                        for k in 0..dim {
                            s += o[1 + k] * grads[a][k];
                        }
                        re[comp.local_offset + a] += wq * s;
                    }
                }
            }
            let dofs = &self.cell_dofs[c * self.cell_ndofs..(c + 1) * self.cell_ndofs];
            for (l, &g) in dofs.iter().enumerate() {
                r[g] += re[l];
            }
        }
        Ok(())
    }

    fn assemble_tangent<K: PointKernel, const N: usize>(
        &self,
        kernel: &K,
        x: &[f64],
        aux: &[&[f64]],
        r: &mut [f64],
        jac: &mut CsrMatrix,
    ) -> Result<(), AssemblyError> {
        let dim = self.mesh.dim();
        let s = dim + 1;
        let nq = self.rule.len();
        let nd = self.cell_ndofs;
        let mut z = vec![0.0; N];
        let mut zd = vec![Dual::<N>::constant(0.0); N];
        let mut out = vec![Dual::<N>::constant(0.0); N];
        let mut auxbuf = vec![vec![0.0; N]; aux.len()];
        let mut re = vec![0.0; nd];
        let mut ke = vec![0.0; nd * nd];
        let mut u = vec![0.0; s];
        for c in 0..self.mesh.num_cells() {
            re.iter_mut().for_each(|v| *v = 0.0);
            ke.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..nq {
                self.interpolate(x, c, q, &mut z);
                self.local_aux(aux, c, q, &mut auxbuf);
                for (i, (d, &v)) in zd.iter_mut().zip(&z).enumerate() {
                    *d = Dual::variable(v, i);
                }
                let input = QpInput { cell: c, x: self.points[c * nq + q], aux: &auxbuf };
                out.iter_mut().for_each(|v| *v = Dual::constant(0.0));
                kernel.eval::<Dual<N>>(&input, &zd, &mut out);
                if out.iter().any(|v| !v.re.is_finite() || v.eps.iter().any(|e| !e.is_finite())) {
                    return Err(AssemblyError::NonFinite { cell: c });
                }
                let wq = self.weights[c * nq + q];
                // test functions: slot 0 is the value, slots 1..=dim the gradient
                let test = |comp: &Component, a: usize, slot: usize| -> f64 {
                    let (vals, grads) = self.basis(comp.family, c, q);
                    if slot == 0 {
                        vals[a]
                    } else {
                        grads[a][slot - 1]
                    }
                };
                for (ci, ca) in self.components.iter().enumerate() {
                    for a in 0..ca.nodes {
                        let mut v = 0.0;
                        for al in 0..s {
                            v += out[ci * s + al].re * test(ca, a, al);
                        }
                        re[ca.local_offset + a] += wq * v;
                    }
                    for (gi, cb) in self.components.iter().enumerate() {
                        let block_nonzero =
                            (0..s).any(|al| (0..s).any(|be| out[ci * s + al].eps[gi * s + be] != 0.0));
                        if !block_nonzero {
                            continue;
                        }
                        for a in 0..ca.nodes {
                            for be in 0..s {
                                u[be] = (0..s).map(|al| test(ca, a, al) * out[ci * s + al].eps[gi * s + be]).sum();
                            }
                            let row = (ca.local_offset + a) * nd;
                            for b in 0..cb.nodes {
                                let mut v = 0.0;
                                for be in 0..s {
                                    v += u[be] * test(cb, b, be);
                                }
                                ke[row + cb.local_offset + b] += wq * v;
                            }
                        }
                    }
                }
            }
            let dofs = &self.cell_dofs[c * nd..(c + 1) * nd];
            for (l, &g) in dofs.iter().enumerate() {
                r[g] += re[l];
            }
            let slots = &self.slots[c * nd * nd..(c + 1) * nd * nd];
            for (k, &slot) in slots.iter().enumerate() {
                if ke[k] != 0.0 {
                    jac.add_at(slot, ke[k]);
                }
            }
        }
        Ok(())
    }
}
