//! Lagrange P1/P2 reference elements and affine cell geometry.
//!
//! Node order: vertices first, then edge midpoints in the local edge order of
//! [`crate::mesh::TRI_EDGES`] / [`crate::mesh::TET_EDGES`].

use crate::mesh::{Mesh, TET_EDGES, TRI_EDGES};

use super::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    P1,
    P2,
}

impl Family {
    pub fn num_nodes(self, dim: usize) -> usize {
        match (self, dim) {
            (Family::P1, d) => d + 1,
            (Family::P2, 2) => 6,
            (Family::P2, _) => 10,
        }
    }
}

fn local_edges(dim: usize) -> &'static [[usize; 2]] {
    if dim == 2 {
        &TRI_EDGES
    } else {
        &TET_EDGES
    }
}

fn barycentric(dim: usize, xi: &[f64; 3]) -> [f64; 4] {
    let mut l = [0.0; 4];
    l[0] = 1.0 - xi[..dim].iter().sum::<f64>();
    l[1..=dim].copy_from_slice(&xi[..dim]);
    l
}

/// Reference gradient of barycentric coordinate `i`.
fn bary_grad(dim: usize, i: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    if i == 0 {
        g[..dim].iter_mut().for_each(|x| *x = -1.0);
    } else {
        g[i - 1] = 1.0;
    }
    g
}

/// Basis values and reference gradients at one point.
pub fn eval_basis(family: Family, dim: usize, xi: &[f64; 3], values: &mut [f64], grads: &mut [[f64; 3]]) {
    let l = barycentric(dim, xi);
    match family {
        Family::P1 => {
            for i in 0..=dim {
                values[i] = l[i];
                grads[i] = bary_grad(dim, i);
            }
        }
        Family::P2 => {
            for i in 0..=dim {
                values[i] = l[i] * (2.0 * l[i] - 1.0);
                let g = bary_grad(dim, i);
                grads[i] = g.map(|x| (4.0 * l[i] - 1.0) * x);
            }
            for (e, &[a, b]) in local_edges(dim).iter().enumerate() {
                let (ga, gb) = (bary_grad(dim, a), bary_grad(dim, b));
                values[dim + 1 + e] = 4.0 * l[a] * l[b];
                grads[dim + 1 + e] = [0, 1, 2].map(|k| 4.0 * (ga[k] * l[b] + l[a] * gb[k]));
            }
        }
    }
}

/// Reference coordinates of the element nodes.
pub fn node_points(family: Family, dim: usize) -> Vec<[f64; 3]> {
    let mut vertices = vec![[0.0; 3]];
    for k in 0..dim {
        let mut v = [0.0; 3];
        v[k] = 1.0;
        vertices.push(v);
    }
    let mut pts = vertices.clone();
    if family == Family::P2 {
        for &[a, b] in local_edges(dim) {
            pts.push([0, 1, 2].map(|k| 0.5 * (vertices[a][k] + vertices[b][k])));
        }
    }
    pts
}

/// Basis tabulated at the points of a quadrature rule.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub family: Family,
    pub dim: usize,
    pub num_nodes: usize,
    /// `values[q][i]`
    pub values: Vec<Vec<f64>>,
    /// `grads[q][i]`, reference gradients.
    pub grads: Vec<Vec<[f64; 3]>>,
}

impl ReferenceElement {
    pub fn tabulate(family: Family, dim: usize, rule: &QuadratureRule) -> Self {
        let n = family.num_nodes(dim);
        let mut values = Vec::with_capacity(rule.len());
        let mut grads = Vec::with_capacity(rule.len());
        for p in &rule.points {
            let mut v = vec![0.0; n];
            let mut g = vec![[0.0; 3]; n];
            eval_basis(family, dim, p, &mut v, &mut g);
            values.push(v);
            grads.push(g);
        }
        ReferenceElement { family, dim, num_nodes: n, values, grads }
    }
}

/// Affine map of one cell: `x = x0 + Jac xi`.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub dim: usize,
    pub x0: [f64; 3],
    pub jac: [[f64; 3]; 3],
    /// `Jac^{-T}`, maps reference gradients to physical ones.
    pub jac_inv_t: [[f64; 3]; 3],
    pub det: f64,
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let dim = mesh.dim();
        let verts = mesh.cell(cell);
        let x0 = mesh.vertex(verts[0]);
        let mut jac = [[0.0; 3]; 3];
        for k in 0..dim {
            let xk = mesh.vertex(verts[k + 1]);
            for i in 0..dim {
                jac[i][k] = xk[i] - x0[i];
            }
        }
        for i in dim..3 {
            jac[i][i] = 1.0;
        }
        let m = crate::tensor::Mat3::<f64>(jac);
        let (inv_t, det) = m.inv_transpose_det();
        CellGeometry { dim, x0, jac, jac_inv_t: inv_t.0, det }
    }

    pub fn map(&self, xi: &[f64; 3]) -> [f64; 3] {
        let mut x = self.x0;
        for i in 0..self.dim {
            for k in 0..self.dim {
                x[i] += self.jac[i][k] * xi[k];
            }
        }
        x
    }

    pub fn physical_grad(&self, g: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            for k in 0..self.dim {
                out[i] += self.jac_inv_t[i][k] * g[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::quadrature::quadrature;

    #[test]
    fn partition_of_unity_and_zero_gradient_sum() {
        for dim in [2, 3] {
            let rule = quadrature(dim, 6).unwrap();
            for family in [Family::P1, Family::P2] {
                let el = ReferenceElement::tabulate(family, dim, &rule);
                for q in 0..rule.len() {
                    let s: f64 = el.values[q].iter().sum();
                    assert!((s - 1.0).abs() < 1e-14);
                    for k in 0..dim {
                        let g: f64 = el.grads[q].iter().map(|g| g[k]).sum();
                        assert!(g.abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn nodal_interpolation_property() {
        for dim in [2, 3] {
            for family in [Family::P1, Family::P2] {
                let n = family.num_nodes(dim);
                let mut v = vec![0.0; n];
                let mut g = vec![[0.0; 3]; n];
                for (j, p) in node_points(family, dim).iter().enumerate() {
                    eval_basis(family, dim, p, &mut v, &mut g);
                    for (i, vi) in v.iter().enumerate() {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((vi - e).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let xi = [0.21, 0.17, 0.33];
        for dim in [2, 3] {
            let n = Family::P2.num_nodes(dim);
            let (mut v, mut g) = (vec![0.0; n], vec![[0.0; 3]; n]);
            let (mut vp, mut vm, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![[0.0; 3]; n]);
            eval_basis(Family::P2, dim, &xi, &mut v, &mut g);
            for k in 0..dim {
                let h = 1e-6;
                let (mut a, mut b) = (xi, xi);
                a[k] += h;
                b[k] -= h;
                eval_basis(Family::P2, dim, &a, &mut vp, &mut tmp);
                eval_basis(Family::P2, dim, &b, &mut vm, &mut tmp);
                for i in 0..n {
                    assert!(((vp[i] - vm[i]) / (2.0 * h) - g[i][k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn p2_reproduces_quadratics_at_quadrature_points() {
        let mesh = Mesh::build_slab(1, 1, 1, [1.0, 2.0, 0.5]).unwrap();
        let f = |x: [f64; 3]| 1.0 + x[0] - 2.0 * x[1] * x[2] + 3.0 * x[0] * x[0] + 0.5 * x[2] * x[2];
        let rule = quadrature(3, 6).unwrap();
        let el = ReferenceElement::tabulate(Family::P2, 3, &rule);
        for c in 0..mesh.num_cells() {
            let geo = CellGeometry::new(&mesh, c);
            let nodal: Vec<f64> = node_points(Family::P2, 3).iter().map(|p| f(geo.map(p))).collect();
            for (q, p) in rule.points.iter().enumerate() {
                let interp: f64 = nodal.iter().zip(&el.values[q]).map(|(a, b)| a * b).sum();
                assert!((interp - f(geo.map(p))).abs() < 1e-12);
            }
        }
    }
}
