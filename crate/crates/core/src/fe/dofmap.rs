//! Global numbering of field-blocked degrees of freedom.
//!
//! Global index of `(field, component, node)` is
//! `offset[field] + component * num_nodes(field) + node`. P2 nodes are the
//! mesh vertices followed by the edges.

use std::collections::BTreeSet;

use crate::mesh::{Mesh, Tag};

use super::element::Family;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub family: Family,
    pub ncomp: usize,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    dim: usize,
    num_vertices: usize,
    num_edges: usize,
    fields: Vec<FieldSpec>,
    offsets: Vec<usize>,
    total: usize,
    cell_nodes_p1: Vec<usize>,
    cell_nodes_p2: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, fields: Vec<FieldSpec>) -> Self {
        let dim = mesh.dim();
        let (nv, ne) = (mesh.num_vertices(), mesh.num_edges());
        let nodes = |f: Family| if f == Family::P1 { nv } else { nv + ne };
        let mut offsets = Vec::with_capacity(fields.len());
        let mut total = 0;
        for f in &fields {
            offsets.push(total);
            total += f.ncomp * nodes(f.family);
        }
        let mut cell_nodes_p1 = Vec::new();
        let mut cell_nodes_p2 = Vec::new();
        for c in 0..mesh.num_cells() {
            cell_nodes_p1.extend_from_slice(mesh.cell(c));
            cell_nodes_p2.extend_from_slice(mesh.cell(c));
            cell_nodes_p2.extend(mesh.cell_edges(c).iter().map(|e| nv + e));
        }
        DofMap { dim, num_vertices: nv, num_edges: ne, fields, offsets, total, cell_nodes_p1, cell_nodes_p2 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn num_nodes(&self, field: usize) -> usize {
        match self.fields[field].family {
            Family::P1 => self.num_vertices,
            Family::P2 => self.num_vertices + self.num_edges,
        }
    }

    pub fn offset(&self, field: usize) -> usize {
        self.offsets[field]
    }

    /// Contiguous global range of one field.
    pub fn range(&self, field: usize) -> std::ops::Range<usize> {
        let start = self.offsets[field];
        start..start + self.fields[field].ncomp * self.num_nodes(field)
    }

    pub fn global(&self, field: usize, comp: usize, node: usize) -> usize {
        self.offsets[field] + comp * self.num_nodes(field) + node
    }

    pub fn cell_nodes(&self, family: Family, cell: usize) -> &[usize] {
        let n = family.num_nodes(self.dim);
        match family {
            Family::P1 => &self.cell_nodes_p1[cell * n..(cell + 1) * n],
            Family::P2 => &self.cell_nodes_p2[cell * n..(cell + 1) * n],
        }
    }

    /// Global dofs of a cell, field by field and component by component.
    pub fn cell_dofs(&self, cell: usize, out: &mut Vec<usize>) {
        out.clear();
        for (fi, f) in self.fields.iter().enumerate() {
            let nodes = self.cell_nodes(f.family, cell);
            for c in 0..f.ncomp {
                out.extend(nodes.iter().map(|&n| self.global(fi, c, n)));
            }
        }
    }

    /// Nodes of `family` lying on facets carrying `tag`, sorted.
    pub fn boundary_nodes(&self, mesh: &Mesh, family: Family, tag: Tag) -> Vec<usize> {
        let mut nodes = BTreeSet::new();
        for facet in mesh.facets_with_tag(tag) {
            nodes.extend(facet.vertices.iter().copied());
            if family == Family::P2 {
                let v = &facet.vertices;
                for i in 0..v.len() {
                    for j in i + 1..v.len() {
                        let e = mesh.edge_between(v[i], v[j]).expect("facet edge exists in mesh");
                        nodes.insert(self.num_vertices + e);
                    }
                }
            }
        }
        nodes.into_iter().collect()
    }

    /// Physical location of every node of `family`.
    pub fn node_coords(&self, mesh: &Mesh, family: Family) -> Vec<[f64; 3]> {
        let mut pts = mesh.coords().to_vec();
        if family == Family::P2 {
            for &[a, b] in mesh.edges() {
                let (xa, xb) = (mesh.vertex(a), mesh.vertex(b));
                pts.push([0, 1, 2].map(|k| 0.5 * (xa[k] + xb[k])));
            }
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(dim: usize) -> Vec<FieldSpec> {
        vec![
            FieldSpec { name: "d", family: Family::P2, ncomp: dim },
            FieldSpec { name: "phi", family: Family::P1, ncomp: 1 },
            FieldSpec { name: "lambda", family: Family::P1, ncomp: 1 },
        ]
    }

    #[test]
    fn contiguous_and_disjoint() {
        let mesh = Mesh::build_unit_square(2, 2, 1.0).unwrap();
        let dm = DofMap::new(&mesh, fields(2));
        assert_eq!(dm.len(), 2 * 25 + 9 + 9);
        assert_eq!(dm.range(0), 0..50);
        assert_eq!(dm.range(1), 50..59);
        assert_eq!(dm.range(2), 59..68);
        let mut seen = vec![false; dm.len()];
        let mut dofs = Vec::new();
        for c in 0..mesh.num_cells() {
            dm.cell_dofs(c, &mut dofs);
            assert_eq!(dofs.len(), 2 * 6 + 3 + 3);
            for &d in &dofs {
                seen[d] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn p2_nodes_on_edge_of_two_by_two() {
        let mesh = Mesh::build_unit_square(2, 2, 1.0).unwrap();
        let dm = DofMap::new(&mesh, fields(2));
        let nodes = dm.boundary_nodes(&mesh, Family::P2, Tag::XMin);
        assert_eq!(nodes.len(), 5);
        let pts = dm.node_coords(&mesh, Family::P2);
        assert!(nodes.iter().all(|&n| pts[n][0] == 0.0));
        assert_eq!(dm.boundary_nodes(&mesh, Family::P1, Tag::YMax).len(), 3);
    }
}
