//! C ABI over the `pororef` solver.
//!
//! Every function returns a [`PororefStatus`]. On failure the message is
//! kept per thread and read with [`pororef_last_error`]. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pororef::config::{parse_str, RunConfig};
use pororef::driver::{execute, run_single, Command, DriverError, SolvedRun};
use pororef::weak_forms::{FormulationKind, ProblemKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PororefStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Divergence = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PororefProblem {
    Forward = 0,
    Refconf = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PororefFormulation {
    Primal = 0,
    MixedP = 1,
    MixedU = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PororefCommand {
    Forward = 0,
    Refconf = 1,
    Roundtrip = 2,
    AaSweep = 3,
    Oracle = 4,
}

/// Run configuration.
pub struct PororefConfig(RunConfig);

/// Stationary state of a single run, kept in memory.
pub struct PororefSolution(SolvedRun);

/// JSON summary of a file-writing command.
pub struct PororefReport(String);

/// Scalar outcome of a single run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PororefRunStats {
    pub total_steps: usize,
    pub iterations: usize,
    pub fallbacks: usize,
    pub newton_iterations: usize,
    pub phi_avg: f64,
    pub final_rel_residual: f64,
    pub t_final: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: PororefStatus, msg: impl Into<String>) -> PororefStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn driver_status(e: DriverError) -> PororefStatus {
    let s = if e.is_divergence() {
        PororefStatus::Divergence
    } else if matches!(e, DriverError::Io(_)) {
        PororefStatus::Io
    } else {
        PororefStatus::Config
    };
    fail(s, e.to_string())
}

fn guard(f: impl FnOnce() -> PororefStatus) -> PororefStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PororefStatus::Panic, msg)
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, PororefStatus> {
    if p.is_null() {
        return Err(fail(PororefStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(PororefStatus::InvalidArgument, "string is not UTF-8"))
}

/// Copies `text` plus a NUL into `buf`. `needed` receives the full size.
unsafe fn copy_out(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> PororefStatus {
    let n = text.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || cap < n {
        return fail(PororefStatus::BufferTooSmall, format!("need {n} bytes"));
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    PororefStatus::Ok
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(PororefStatus::NullPointer, concat!("null ", stringify!($p))),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(PororefStatus::NullPointer, concat!("null ", stringify!($p))),
        }
    };
}

/// Copies the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must be writable for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> PororefStatus {
    let text = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&text, buf, cap, needed)
}

/// Default configuration (2D round trip, 16x16 cells).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_default(out: *mut *mut PororefConfig) -> PororefStatus {
    let out = deref_mut!(out);
    *out = Box::into_raw(Box::new(PororefConfig(RunConfig::default())));
    PororefStatus::Ok
}

/// Configuration from TOML text; unknown keys are rejected.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_from_toml(toml: *const c_char, out: *mut *mut PororefConfig) -> PororefStatus {
    guard(|| {
        let out = deref_mut!(out);
        let text = match c_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_str(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(PororefConfig(c)));
                PororefStatus::Ok
            }
            Err(e) => fail(PororefStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must come from a `pororef_config_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_free(cfg: *mut PororefConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Effective configuration as TOML.
///
/// # Safety
/// `cfg` must be valid; `buf` writable for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_to_toml(cfg: *const PororefConfig, buf: *mut c_char, cap: usize, needed: *mut usize) -> PororefStatus {
    let cfg = deref!(cfg);
    copy_out(&cfg.0.to_toml(), buf, cap, needed)
}

/// # Safety
/// `cfg` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_set_tol(cfg: *mut PororefConfig, tol: f64) -> PororefStatus {
    let cfg = deref_mut!(cfg);
    if !(tol > 0.0 && tol < 1.0) {
        return fail(PororefStatus::InvalidArgument, format!("tol = {tol}: must lie in (0, 1)"));
    }
    cfg.0.stepper.stationary_tol = tol;
    PororefStatus::Ok
}

/// # Safety
/// `cfg` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_set_formulation(cfg: *mut PororefConfig, f: PororefFormulation) -> PororefStatus {
    let cfg = deref_mut!(cfg);
    cfg.0.formulation = match f {
        PororefFormulation::Primal => FormulationKind::Primal,
        PororefFormulation::MixedP => FormulationKind::MixedP,
        PororefFormulation::MixedU => FormulationKind::MixedU,
    };
    PororefStatus::Ok
}

/// Cell counts per axis; `dim` is 2 or 3 and must match the mesh lengths.
///
/// # Safety
/// `cfg` must be valid and `cells` readable for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_set_mesh(cfg: *mut PororefConfig, cells: *const usize, dim: usize) -> PororefStatus {
    let cfg = deref_mut!(cfg);
    if cells.is_null() {
        return fail(PororefStatus::NullPointer, "null cells");
    }
    let n = std::slice::from_raw_parts(cells, dim);
    if dim != cfg.0.mesh_lengths.len() || n.contains(&0) {
        return fail(PororefStatus::InvalidArgument, format!("mesh cells {n:?} do not fit lengths {:?}", cfg.0.mesh_lengths));
    }
    cfg.0.mesh_cells = n.to_vec();
    PororefStatus::Ok
}

/// Anderson depth list; single runs use the first entry.
///
/// # Safety
/// `cfg` must be valid and `depths` readable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_set_aa_depths(cfg: *mut PororefConfig, depths: *const usize, len: usize) -> PororefStatus {
    let cfg = deref_mut!(cfg);
    if depths.is_null() || len == 0 {
        return fail(PororefStatus::InvalidArgument, "aa depth list is empty");
    }
    cfg.0.aa_depth = std::slice::from_raw_parts(depths, len).to_vec();
    PororefStatus::Ok
}

/// # Safety
/// `cfg` must be valid and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pororef_config_set_output_dir(cfg: *mut PororefConfig, dir: *const c_char) -> PororefStatus {
    let cfg = deref_mut!(cfg);
    match c_str(dir) {
        Ok(d) => {
            cfg.0.output_dir = PathBuf::from(d);
            PororefStatus::Ok
        }
        Err(s) => s,
    }
}

/// Runs one problem to stationarity without writing files.
///
/// # Safety
/// `cfg` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pororef_solve(cfg: *const PororefConfig, problem: PororefProblem, out: *mut *mut PororefSolution) -> PororefStatus {
    guard(|| {
        let cfg = deref!(cfg);
        let out = deref_mut!(out);
        let kind = match problem {
            PororefProblem::Forward => ProblemKind::Forward,
            PororefProblem::Refconf => ProblemKind::Refconf,
        };
        match run_single(kind, &cfg.0, cfg.0.primary_depth()) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(PororefSolution(r)));
                PororefStatus::Ok
            }
            Err(e) => driver_status(e),
        }
    })
}

/// # Safety
/// `sol` must come from [`pororef_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_solution_free(sol: *mut PororefSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// # Safety
/// `sol` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pororef_solution_stats(sol: *const PororefSolution, out: *mut PororefRunStats) -> PororefStatus {
    let sol = deref!(sol);
    let out = deref_mut!(out);
    let s = &sol.0.summary;
    *out = PororefRunStats {
        total_steps: s.total_steps,
        iterations: s.iterations,
        fallbacks: s.fallbacks,
        newton_iterations: s.newton_iterations,
        phi_avg: s.phi_avg,
        final_rel_residual: s.final_rel_residual,
        t_final: s.t_final,
    };
    PororefStatus::Ok
}

/// Number of mesh vertices of the solved system.
///
/// # Safety
/// `sol` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pororef_solution_num_vertices(sol: *const PororefSolution, out: *mut usize) -> PororefStatus {
    let sol = deref!(sol);
    *deref_mut!(out) = sol.0.system.mesh().num_vertices();
    PororefStatus::Ok
}

/// Vertex porosity values (`len` must equal the vertex count).
///
/// # Safety
/// `sol` must be valid and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pororef_solution_porosity(sol: *const PororefSolution, buf: *mut f64, len: usize) -> PororefStatus {
    let sol = deref!(sol);
    let phi = sol.0.system.porosity(&sol.0.outcome.state);
    if buf.is_null() || len != phi.len() {
        return fail(PororefStatus::BufferTooSmall, format!("need {} values", phi.len()));
    }
    std::ptr::copy_nonoverlapping(phi.as_ptr(), buf, phi.len());
    PororefStatus::Ok
}

/// Vertex displacement, three interleaved components per vertex
/// (`len` must equal 3 times the vertex count).
///
/// # Safety
/// `sol` must be valid and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pororef_solution_displacement(sol: *const PororefSolution, buf: *mut f64, len: usize) -> PororefStatus {
    let sol = deref!(sol);
    let d = sol.0.system.vertex_displacement(&sol.0.outcome.state);
    if buf.is_null() || len != 3 * d.len() {
        return fail(PororefStatus::BufferTooSmall, format!("need {} values", 3 * d.len()));
    }
    let flat: Vec<f64> = d.iter().flatten().copied().collect();
    std::ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
    PororefStatus::Ok
}

/// Runs a CLI command, writing its files into the configured output directory.
///
/// # Safety
/// `cfg` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pororef_execute(cfg: *const PororefConfig, command: PororefCommand, out: *mut *mut PororefReport) -> PororefStatus {
    guard(|| {
        let cfg = deref!(cfg);
        let out = deref_mut!(out);
        let cmd = match command {
            PororefCommand::Forward => Command::Forward,
            PororefCommand::Refconf => Command::Refconf,
            PororefCommand::Roundtrip => Command::Roundtrip,
            PororefCommand::AaSweep => Command::AaSweep,
            PororefCommand::Oracle => Command::Oracle,
        };
        match execute(cmd, &cfg.0) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(PororefReport(v.to_string())));
                PororefStatus::Ok
            }
            Err(e) => driver_status(e),
        }
    })
}

/// # Safety
/// `report` must be valid; `buf` writable for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_report_json(report: *const PororefReport, buf: *mut c_char, cap: usize, needed: *mut usize) -> PororefStatus {
    let r = deref!(report);
    copy_out(&r.0, buf, cap, needed)
}

/// # Safety
/// `report` must come from [`pororef_execute`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pororef_report_free(report: *mut PororefReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
