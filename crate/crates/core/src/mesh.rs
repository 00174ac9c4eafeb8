//! Structured simplicial meshes of boxes with tagged boundary facets.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("cell count along axis {axis} must be at least 1")]
    ZeroCells { axis: usize },
    #[error("length along axis {axis} must be positive, got {value}")]
    NonPositiveLength { axis: usize, value: f64 },
    #[error("facet {0} is an interior facet")]
    InteriorFacet(usize),
    #[error("facet index {0} out of range")]
    FacetOutOfRange(usize),
    #[error("cell {cell} has non-positive volume {volume}")]
    InvertedCell { cell: usize, volume: f64 },
}

/// Boundary plane labels. Declaration order is the tie-break priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Tag {
    pub const ALL: [Tag; 6] = [Tag::XMin, Tag::XMax, Tag::YMin, Tag::YMax, Tag::ZMin, Tag::ZMax];

    /// Coordinate axis normal to the plane.
    pub fn axis(self) -> usize {
        match self {
            Tag::XMin | Tag::XMax => 0,
            Tag::YMin | Tag::YMax => 1,
            Tag::ZMin | Tag::ZMax => 2,
        }
    }

    pub fn is_min(self) -> bool {
        matches!(self, Tag::XMin | Tag::YMin | Tag::ZMin)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::XMin => "XMIN",
            Tag::XMax => "XMAX",
            Tag::YMin => "YMIN",
            Tag::YMax => "YMAX",
            Tag::ZMin => "ZMIN",
            Tag::ZMax => "ZMAX",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// `dim` vertex indices.
    pub vertices: Vec<usize>,
    /// Adjacent cells; the second is `None` on the boundary.
    pub cells: (usize, Option<usize>),
    pub tag: Option<Tag>,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }
}

/// Local edges of a triangle and of a tetrahedron, as vertex pairs.
pub const TRI_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [0, 2]];
pub const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [1, 2], [0, 2], [0, 3], [1, 3], [2, 3]];

/// Immutable simplicial mesh. Coordinates are stored in 3D with `z = 0` for
/// two-dimensional meshes.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    coords: Vec<[f64; 3]>,
    cells: Vec<usize>,
    edges: Vec<[usize; 2]>,
    edge_ids: HashMap<[usize; 2], usize>,
    cell_edges: Vec<usize>,
    facets: Vec<Facet>,
}

impl Mesh {
    /// Unit-square style triangulation of `[0, side]^2`, each quad split along
    /// its lower-left to upper-right diagonal.
    pub fn build_unit_square(nx: usize, ny: usize, side: f64) -> Result<Mesh, MeshError> {
        Self::build_rectangle(nx, ny, [side, side])
    }

    pub fn build_rectangle(nx: usize, ny: usize, lengths: [f64; 2]) -> Result<Mesh, MeshError> {
        check_counts(&[nx, ny])?;
        check_lengths(&lengths)?;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push([
                    lengths[0] * i as f64 / nx as f64,
                    lengths[1] * j as f64 / ny as f64,
                    0.0,
                ]);
            }
        }
        let mut cells = Vec::with_capacity(6 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                cells.extend_from_slice(&[v00, v10, v11]);
                cells.extend_from_slice(&[v00, v11, v01]);
            }
        }
        let lo = [0.0, 0.0, 0.0];
        let hi = [lengths[0], lengths[1], 0.0];
        Ok(Self::finish(2, coords, cells, lo, hi))
    }

    /// Box `[0,lx] x [0,ly] x [0,lz]` with every hexahedron split into six
    /// tetrahedra around its main diagonal.
    pub fn build_slab(nx: usize, ny: usize, nz: usize, lengths: [f64; 3]) -> Result<Mesh, MeshError> {
        check_counts(&[nx, ny, nz])?;
        check_lengths(&lengths)?;
        let vid = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    coords.push([
                        lengths[0] * i as f64 / nx as f64,
                        lengths[1] * j as f64 / ny as f64,
                        lengths[2] * k as f64 / nz as f64,
                    ]);
                }
            }
        }
        // Kuhn decomposition: each permutation of the axes gives one monotone
        // path from corner (0,0,0) to (1,1,1).
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut cells = Vec::with_capacity(24 * nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    for perm in PERMS {
                        let mut corner = [i, j, k];
                        let mut tet = [vid(i, j, k), 0, 0, 0];
                        for (step, &axis) in perm.iter().enumerate() {
                            corner[axis] += 1;
                            tet[step + 1] = vid(corner[0], corner[1], corner[2]);
                        }
                        if signed_volume(3, &coords, &tet) < 0.0 {
                            tet.swap(2, 3);
                        }
                        cells.extend_from_slice(&tet);
                    }
                }
            }
        }
        Ok(Self::finish(3, coords, cells, [0.0; 3], lengths))
    }

    fn finish(dim: usize, coords: Vec<[f64; 3]>, cells: Vec<usize>, lo: [f64; 3], hi: [f64; 3]) -> Mesh {
        let nv = dim + 1;
        let ncells = cells.len() / nv;
        let local_edges: &[[usize; 2]] = if dim == 2 { &TRI_EDGES } else { &TET_EDGES };
        let mut edge_ids: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut cell_edges = Vec::with_capacity(ncells * local_edges.len());
        for c in 0..ncells {
            let cell = &cells[c * nv..(c + 1) * nv];
            for le in local_edges {
                let (a, b) = (cell[le[0]], cell[le[1]]);
                let key = [a.min(b), a.max(b)];
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
                cell_edges.push(id);
            }
        }

        let mut facet_ids: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        for c in 0..ncells {
            let cell = &cells[c * nv..(c + 1) * nv];
            for skip in 0..nv {
                let mut key: Vec<usize> = (0..nv).filter(|&i| i != skip).map(|i| cell[i]).collect();
                key.sort_unstable();
                match facet_ids.get(&key) {
                    Some(&fid) => facets[fid].cells.1 = Some(c),
                    None => {
                        facet_ids.insert(key.clone(), facets.len());
                        facets.push(Facet { vertices: key, cells: (c, None), tag: None });
                    }
                }
            }
        }
        let scale = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let eps = 1e-12 * scale;
        for facet in facets.iter_mut().filter(|f| f.is_boundary()) {
            facet.tag = Tag::ALL
                .iter()
                .copied()
                .filter(|t| t.axis() < dim)
                .find(|t| {
                    let plane = if t.is_min() { lo[t.axis()] } else { hi[t.axis()] };
                    facet.vertices.iter().all(|&v| (coords[v][t.axis()] - plane).abs() <= eps)
                });
        }
        Mesh { dim, coords, cells, edges, edge_ids, cell_edges, facets }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn vertex(&self, v: usize) -> [f64; 3] {
        self.coords[v]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[c * nv..(c + 1) * nv]
    }

    pub fn cell_edges(&self, c: usize) -> &[usize] {
        let ne = if self.dim == 2 { 3 } else { 6 };
        &self.cell_edges[c * ne..(c + 1) * ne]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Global id of the edge joining two vertices, if it exists.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_ids.get(&[a.min(b), a.max(b)]).copied()
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn boundary_facets(&self) -> impl Iterator<Item = (usize, &Facet)> {
        self.facets.iter().enumerate().filter(|(_, f)| f.is_boundary())
    }

    pub fn facets_with_tag(&self, tag: Tag) -> impl Iterator<Item = &Facet> {
        self.facets.iter().filter(move |f| f.tag == Some(tag))
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        signed_volume(self.dim, &self.coords, self.cell(c))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_volume(c)).sum()
    }

    pub fn cell_centroid(&self, c: usize) -> [f64; 3] {
        centroid(&self.coords, self.cell(c))
    }

    /// Characteristic cell size `(|Omega| / n_cells)^(1/dim)`.
    pub fn mean_cell_size(&self) -> f64 {
        (self.total_volume() / self.num_cells() as f64).powf(1.0 / self.dim as f64)
    }

    /// Outward unit normal of a boundary facet.
    pub fn facet_normal(&self, facet: usize) -> Result<[f64; 3], MeshError> {
        let f = self.facets.get(facet).ok_or(MeshError::FacetOutOfRange(facet))?;
        if !f.is_boundary() {
            return Err(MeshError::InteriorFacet(facet));
        }
        let p = |i: usize| self.coords[f.vertices[i]];
        let mut n = if self.dim == 2 {
            let (a, b) = (p(0), p(1));
            [b[1] - a[1], a[0] - b[0], 0.0]
        } else {
            let (a, b, c) = (p(0), p(1), p(2));
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
        };
        let norm = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        n.iter_mut().for_each(|x| *x /= norm);
        let fc = centroid(&self.coords, &f.vertices);
        let cc = self.cell_centroid(f.cells.0);
        let outward: f64 = (0..3).map(|i| n[i] * (fc[i] - cc[i])).sum();
        if outward < 0.0 {
            n.iter_mut().for_each(|x| *x = -*x);
        }
        Ok(n)
    }

    /// Same topology and tags, vertices moved by `displacement[v]`.
    pub fn warped(&self, displacement: &[[f64; 3]]) -> Result<Mesh, MeshError> {
        assert_eq!(displacement.len(), self.coords.len(), "one displacement per vertex");
        let mut mesh = self.clone();
        for (x, u) in mesh.coords.iter_mut().zip(displacement) {
            for i in 0..3 {
                x[i] += u[i];
            }
        }
        for c in 0..mesh.num_cells() {
            let volume = mesh.cell_volume(c);
            if volume <= 0.0 {
                return Err(MeshError::InvertedCell { cell: c, volume });
            }
        }
        Ok(mesh)
    }
}

fn check_counts(counts: &[usize]) -> Result<(), MeshError> {
    match counts.iter().position(|&n| n == 0) {
        Some(axis) => Err(MeshError::ZeroCells { axis }),
        None => Ok(()),
    }
}

fn check_lengths(lengths: &[f64]) -> Result<(), MeshError> {
    match lengths.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
        Some(axis) => Err(MeshError::NonPositiveLength { axis, value: lengths[axis] }),
        None => Ok(()),
    }
}

fn centroid(coords: &[[f64; 3]], verts: &[usize]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for &v in verts {
        for i in 0..3 {
            c[i] += coords[v][i];
        }
    }
    c.map(|x| x / verts.len() as f64)
}

fn signed_volume(dim: usize, coords: &[[f64; 3]], cell: &[usize]) -> f64 {
    let p0 = coords[cell[0]];
    let d = |k: usize, i: usize| coords[cell[k]][i] - p0[i];
    if dim == 2 {
        0.5 * (d(1, 0) * d(2, 1) - d(2, 0) * d(1, 1))
    } else {
        let det = d(1, 0) * (d(2, 1) * d(3, 2) - d(2, 2) * d(3, 1))
            - d(1, 1) * (d(2, 0) * d(3, 2) - d(2, 2) * d(3, 0))
            + d(1, 2) * (d(2, 0) * d(3, 1) - d(2, 1) * d(3, 0));
        det / 6.0
    }
}
