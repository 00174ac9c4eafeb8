//! Flat TOML run configuration.
//!
//! Every key is optional; an empty file gives the 2D sliding-square
//! benchmark. Units are SI.
//!
//! ```toml
//! problem = "roundtrip"        # forward | refconf | roundtrip
//! formulation = "primal"       # primal | mixed_p | mixed_u
//! mesh_cells = [16, 16]        # two entries: square, three: slab
//! mesh_lengths = [0.01, 0.01]  # m
//! dt = 0.01                    # s
//! t_ramp = 0.1                 # s
//! tol = 1e-6                   # relative stationarity tolerance
//! aa_depth = [0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{MaterialParams, SourcePair, UsykCoefficients};
use crate::fe::newton::NewtonOptions;
use crate::mesh::{Mesh, MeshError};
use crate::time_stepper::{RampMode, TimeStepperConfig};
use crate::weak_forms::FormulationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemChoice {
    Forward,
    Refconf,
    Roundtrip,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

/// File representation; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub problem: Option<ProblemChoice>,
    pub formulation: Option<FormulationKind>,
    pub ramp_mode: Option<RampMode>,
    pub mesh_cells: Option<Vec<usize>>,
    pub mesh_lengths: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub t_ramp: Option<f64>,
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub newton_abs_tol: Option<f64>,
    pub newton_rel_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub aa_depth: Option<Vec<usize>>,
    pub c: Option<f64>,
    pub bulk_modulus: Option<f64>,
    pub volumetric_scale: Option<f64>,
    pub b_ff: Option<f64>,
    pub b_ss: Option<f64>,
    pub b_nn: Option<f64>,
    pub b_fs: Option<f64>,
    pub b_fn: Option<f64>,
    pub b_sn: Option<f64>,
    pub fiber_angle: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub q3: Option<f64>,
    pub permeability: Option<f64>,
    pub rho_f: Option<f64>,
    pub source_beta: Option<Vec<f64>>,
    pub source_pressure: Option<Vec<f64>>,
    pub phi_bar: Option<f64>,
    pub p_ref: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemChoice,
    pub formulation: FormulationKind,
    pub mesh_cells: Vec<usize>,
    /// m
    pub mesh_lengths: Vec<f64>,
    pub params: MaterialParams,
    pub stepper: TimeStepperConfig,
    pub aa_depth: Vec<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemChoice::Roundtrip,
            formulation: FormulationKind::Primal,
            mesh_cells: vec![16, 16],
            mesh_lengths: vec![0.01, 0.01],
            params: MaterialParams::benchmark(),
            stepper: TimeStepperConfig::default(),
            aa_depth: vec![0],
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// 3D slab benchmark: 10x2x2 cells over 5 x 1 x 1 cm, tol 1e-5.
    pub fn slab() -> Self {
        let mut c = RunConfig { mesh_cells: vec![10, 2, 2], mesh_lengths: vec![0.05, 0.01, 0.01], ..RunConfig::default() };
        c.stepper.stationary_tol = 1e-5;
        c
    }

    pub fn dim(&self) -> usize {
        self.mesh_cells.len()
    }

    pub fn build_mesh(&self) -> Result<Mesh, MeshError> {
        let (n, l) = (&self.mesh_cells, &self.mesh_lengths);
        match n.len() {
            2 => Mesh::build_rectangle(n[0], n[1], [l[0], l[1]]),
            _ => Mesh::build_slab(n[0], n[1], n[2], [l[0], l[1], l[2]]),
        }
    }

    /// AA depth used by single runs: the first entry of the list.
    pub fn primary_depth(&self) -> usize {
        self.aa_depth.first().copied().unwrap_or(0)
    }

    pub fn stepper_with_depth(&self, depth: usize) -> TimeStepperConfig {
        TimeStepperConfig { aa_depth: depth, ..self.stepper.clone() }
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let d = RunConfig::default();
        let mp = &d.params;
        let mesh_cells = raw.mesh_cells.clone().unwrap_or(d.mesh_cells.clone());
        if !(mesh_cells.len() == 2 || mesh_cells.len() == 3) {
            return Err(invalid("mesh_cells", "needs two (square) or three (slab) entries"));
        }
        if mesh_cells.contains(&0) {
            return Err(invalid("mesh_cells", "cell counts must be positive"));
        }
        let mesh_lengths = match &raw.mesh_lengths {
            Some(l) => l.clone(),
            None if mesh_cells.len() == 3 => RunConfig::slab().mesh_lengths,
            None => d.mesh_lengths.clone(),
        };
        if mesh_lengths.len() != mesh_cells.len() {
            return Err(invalid("mesh_lengths", "must have as many entries as mesh_cells"));
        }
        if mesh_lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("mesh_lengths", "lengths must be positive (m)"));
        }

        let anisotropic = raw.fiber_angle.is_some_and(|a| a != 0.0);
        let b_keys = [("b_ff", raw.b_ff), ("b_ss", raw.b_ss), ("b_nn", raw.b_nn), ("b_fs", raw.b_fs), ("b_fn", raw.b_fn), ("b_sn", raw.b_sn)];
        if anisotropic {
            if let Some((k, _)) = b_keys.iter().find(|(_, v)| v.is_none()) {
                return Err(invalid(k, "a nonzero fiber_angle needs all six b_* coefficients"));
            }
        }
        let b = |v: Option<f64>| v.unwrap_or(1.0);
        let usyk = UsykCoefficients { ff: b(raw.b_ff), ss: b(raw.b_ss), nn: b(raw.b_nn), fs: b(raw.b_fs), fn_: b(raw.b_fn), sn: b(raw.b_sn) };
        for (k, v) in b_keys {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(k, "must be non-negative"));
                }
            }
        }

        let sources = match (&raw.source_beta, &raw.source_pressure) {
            (None, None) => mp.sources.clone(),
            (Some(b), Some(p)) if b.len() == p.len() => b.iter().zip(p).map(|(&beta, &pressure)| SourcePair { beta, pressure }).collect(),
            (Some(_), Some(_)) => return Err(invalid("source_pressure", "must have as many entries as source_beta")),
            (Some(_), None) => return Err(invalid("source_pressure", "required together with source_beta")),
            (None, Some(_)) => return Err(invalid("source_beta", "required together with source_pressure")),
        };
        for s in &sources {
            if !(s.beta >= 0.0) {
                return Err(invalid("source_beta", "must be non-negative (1/(s Pa))"));
            }
        }

        let params = MaterialParams {
            c: raw.c.unwrap_or(mp.c),
            b: raw.bulk_modulus.unwrap_or(mp.b),
            volumetric_scale: raw.volumetric_scale.unwrap_or(mp.volumetric_scale),
            usyk,
            fiber_angle: raw.fiber_angle.unwrap_or(0.0),
            q1: raw.q1.unwrap_or(mp.q1),
            q2: raw.q2.unwrap_or(mp.q2),
            q3: raw.q3.unwrap_or(mp.q3),
            k: raw.permeability.unwrap_or(mp.k),
            rho_f: raw.rho_f.unwrap_or(mp.rho_f),
            sources,
            phi_bar: raw.phi_bar.unwrap_or(mp.phi_bar),
            p_ref: raw.p_ref.unwrap_or(mp.p_ref),
        };
        params.validate().map_err(|e| match e {
            crate::constitutive::ConstitutiveError::InvalidParameter { name, .. } => invalid(config_key(name), e.to_string()),
            other => invalid("material", other.to_string()),
        })?;

        let ds = &d.stepper;
        let stepper = TimeStepperConfig {
            dt: raw.dt.unwrap_or(ds.dt),
            t_ramp: raw.t_ramp.unwrap_or(ds.t_ramp),
            stationary_tol: raw.tol.unwrap_or(if mesh_cells.len() == 3 { 1e-5 } else { ds.stationary_tol }),
            max_steps: raw.max_steps.unwrap_or(ds.max_steps),
            ramp_mode: raw.ramp_mode.unwrap_or(ds.ramp_mode),
            newton: NewtonOptions {
                abs_tol: raw.newton_abs_tol.unwrap_or(ds.newton.abs_tol),
                rel_tol: raw.newton_rel_tol.unwrap_or(ds.newton.rel_tol),
                max_iter: raw.newton_max_iter.unwrap_or(ds.newton.max_iter),
            },
            aa_depth: 0,
        };
        stepper.validate().map_err(|e| match e {
            crate::time_stepper::ConfigError::Invalid { key, .. } => invalid(key, e.to_string()),
        })?;
        let aa_depth = raw.aa_depth.clone().unwrap_or(d.aa_depth.clone());
        if aa_depth.is_empty() {
            return Err(invalid("aa_depth", "list must not be empty"));
        }
        let mut cfg = RunConfig {
            problem: raw.problem.unwrap_or(d.problem),
            formulation: raw.formulation.unwrap_or(d.formulation),
            mesh_cells,
            mesh_lengths,
            params,
            stepper,
            aa_depth,
            output_dir: raw.output_dir.clone().unwrap_or(d.output_dir),
            seed: raw.seed.unwrap_or(0),
        };
        cfg.stepper.aa_depth = cfg.primary_depth();
        Ok(cfg)
    }

    /// Fully populated file form, for the effective-config echo.
    pub fn to_raw(&self) -> RawConfig {
        let p = &self.params;
        let s = &self.stepper;
        RawConfig {
            problem: Some(self.problem),
            formulation: Some(self.formulation),
            ramp_mode: Some(s.ramp_mode),
            mesh_cells: Some(self.mesh_cells.clone()),
            mesh_lengths: Some(self.mesh_lengths.clone()),
            dt: Some(s.dt),
            t_ramp: Some(s.t_ramp),
            tol: Some(s.stationary_tol),
            max_steps: Some(s.max_steps),
            newton_abs_tol: Some(s.newton.abs_tol),
            newton_rel_tol: Some(s.newton.rel_tol),
            newton_max_iter: Some(s.newton.max_iter),
            aa_depth: Some(self.aa_depth.clone()),
            c: Some(p.c),
            bulk_modulus: Some(p.b),
            volumetric_scale: Some(p.volumetric_scale),
            b_ff: Some(p.usyk.ff),
            b_ss: Some(p.usyk.ss),
            b_nn: Some(p.usyk.nn),
            b_fs: Some(p.usyk.fs),
            b_fn: Some(p.usyk.fn_),
            b_sn: Some(p.usyk.sn),
            fiber_angle: Some(p.fiber_angle),
            q1: Some(p.q1),
            q2: Some(p.q2),
            q3: Some(p.q3),
            permeability: Some(p.k),
            rho_f: Some(p.rho_f),
            source_beta: Some(p.sources.iter().map(|s| s.beta).collect()),
            source_pressure: Some(p.sources.iter().map(|s| s.pressure).collect()),
            phi_bar: Some(p.phi_bar),
            p_ref: Some(p.p_ref),
            output_dir: Some(self.output_dir.clone()),
            seed: Some(self.seed),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("flat config serializes")
    }
}

/// File key of a material parameter name.
fn config_key(name: &str) -> &str {
    match name {
        "C" => "c",
        "B" => "bulk_modulus",
        "k" => "permeability",
        other => other,
    }
}

pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Unvalidated file contents, for callers that layer overrides on top.
pub fn read_raw(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_raw(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::from_raw(&parse_raw(text)?)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    RunConfig::from_raw(&read_raw(path)?)
}

/// Writes `effective_config.toml` into `dir`.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("effective_config.toml");
    std::fs::write(&path, cfg.to_toml())?;
    Ok(path)
}
