//! File output: trajectory CSVs, legacy VTK fields and JSON summaries.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::oracle0d::HomogeneousState;
use crate::time_stepper::{PoroSystem, Trajectory};
use crate::weak_forms::{FieldKind, ProblemKind};

pub const TRAJECTORY_HEADER: &str = "Time,phiAvg,residual,newton_iters,rel_residual,fallback";
pub const ORACLE_HEADER: &str = "Time,phiAvg,lambda,stretch_a,stretch_b";

/// Trajectory CSV. `rel_residual` is empty before the normalization exists.
pub fn trajectory_csv(tr: &Trajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for r in &tr.records {
        let rel = r.rel_residual.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{},{}", r.t, r.phi_avg, r.residual, r.newton_iters, rel, u8::from(r.fallback)).expect("string write");
    }
    s
}

pub fn write_trajectory_csv(tr: &Trajectory, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, trajectory_csv(tr))
}

pub fn oracle_csv(states: &[HomogeneousState], problem: ProblemKind) -> String {
    let mut s = String::from(ORACLE_HEADER);
    s.push('\n');
    for st in states {
        writeln!(s, "{},{},{},{},{}", st.t, st.avg_porosity(problem), st.lambda, st.stretches[0], st.stretches[1]).expect("string write");
    }
    s
}

pub fn write_oracle_csv(states: &[HomogeneousState], problem: ProblemKind, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, oracle_csv(states, problem))
}

/// Legacy ASCII VTK unstructured grid. P2 fields are written at the
/// vertices only (midside values dropped), P1 fields as they are.
pub fn vtk_string(sys: &PoroSystem, x: &[f64]) -> String {
    let mesh = sys.mesh();
    let dim = mesh.dim();
    let nv = mesh.num_vertices();
    let nc = mesh.num_cells();
    let per = dim + 1;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nporoelastic state\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {nv} double").expect("string write");
    for p in mesh.coords() {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).expect("string write");
    }
    writeln!(s, "CELLS {nc} {}", nc * (per + 1)).expect("string write");
    for c in 0..nc {
        let v: Vec<String> = mesh.cell(c).iter().map(|i| i.to_string()).collect();
        writeln!(s, "{per} {}", v.join(" ")).expect("string write");
    }
    writeln!(s, "CELL_TYPES {nc}").expect("string write");
    let ty = if dim == 2 { 5 } else { 10 };
    for _ in 0..nc {
        writeln!(s, "{ty}").expect("string write");
    }
    writeln!(s, "POINT_DATA {nv}").expect("string write");
    let dm = sys.dofmap();
    let layout = sys.layout();
    let vector = |s: &mut String, name: &str, field: usize| {
        writeln!(s, "VECTORS {name} double").expect("string write");
        for v in 0..nv {
            let mut c = [0.0; 3];
            for (k, ck) in c.iter_mut().enumerate().take(dim) {
                *ck = x[dm.global(field, k, v)];
            }
            writeln!(s, "{} {} {}", c[0], c[1], c[2]).expect("string write");
        }
    };
    let scalar = |s: &mut String, name: &str, field: usize| {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").expect("string write");
        for v in 0..nv {
            writeln!(s, "{}", x[dm.global(field, 0, v)]).expect("string write");
        }
    };
    vector(&mut s, "displacement", 0);
    scalar(&mut s, "porosity", 1);
    scalar(&mut s, "lambda", 2);
    if let Some(f) = layout.field(FieldKind::Mu) {
        scalar(&mut s, "mu", f);
    }
    if let Some(f) = layout.field(FieldKind::Velocity) {
        vector(&mut s, "velocity", f);
    }
    s
}

pub fn write_fields(sys: &PoroSystem, x: &[f64], path: &Path) -> std::io::Result<()> {
    std::fs::write(path, vtk_string(sys, x))
}

/// Point coordinates of a legacy VTK file written by [`write_fields`].
pub fn read_vtk_points(text: &str) -> Result<Vec<[f64; 3]>, String> {
    let mut lines = text.lines();
    let header = lines.by_ref().find(|l| l.starts_with("POINTS")).ok_or("no POINTS section")?;
    let n: usize = header.split_whitespace().nth(1).and_then(|v| v.parse().ok()).ok_or("bad POINTS header")?;
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next().ok_or("truncated POINTS section")?;
        let v: Vec<f64> = l.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        if v.len() != 3 {
            return Err(format!("point line `{l}` needs three coordinates"));
        }
        pts.push([v[0], v[1], v[2]]);
    }
    Ok(pts)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}
