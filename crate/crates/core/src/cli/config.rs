//! Config file schema, `--set` overrides and section validation.
//!
//! Dynamics sections are in the dimensionless units of the simulation
//! (one common rate unit, time in its inverse); SI quantities carry their
//! unit in the key name.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Failure;
use crate::circuit::{angular_frequency, CircuitParams, DampingConvention, EnhancementInputs};
use crate::control::OptimizeConfig;
use crate::dynamics::StepControl;
use crate::error::{Error, Result};
use crate::hilbert::DEFAULT_TAIL_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Top level of a config file. Every section is optional; a missing
/// section runs with its defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub output_dir: Option<PathBuf>,
    pub propagate: Option<Propagate>,
    #[serde(rename = "compare-rwa")]
    pub compare_rwa: Option<CompareRwa>,
    #[serde(rename = "cat-prep")]
    pub cat_prep: Option<CatPrep>,
    pub optimize: Option<OptimizeConfig>,
    #[serde(rename = "scan-tau")]
    pub scan_tau: Option<ScanTau>,
    #[serde(rename = "photon-pressure")]
    pub photon_pressure: Option<PhotonPressure>,
    #[serde(rename = "circuit-design")]
    pub circuit_design: Option<CircuitDesign>,
}

/// Exact and numeric evolution of a static-coupling pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propagate {
    pub dim_a: usize,
    pub dim_b: usize,
    pub omega_lc: f64,
    pub omega_m: f64,
    pub g: f64,
    /// Last sample time; defaults to two mechanical periods.
    pub t_max: Option<f64>,
    pub samples: usize,
    /// LC amplitudes of the initial state; default is the uniform superposition.
    pub initial_lc: Option<Vec<f64>>,
    pub step_tol: f64,
    pub tail_tol: f64,
}

impl Default for Propagate {
    fn default() -> Self {
        Self {
            dim_a: 3,
            dim_b: 30,
            omega_lc: 1.0,
            omega_m: 1.0,
            g: 0.1,
            t_max: None,
            samples: 21,
            initial_lc: None,
            step_tol: 1e-10,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

impl Propagate {
    pub fn t_max(&self) -> f64 {
        self.t_max.unwrap_or(4.0 * PI / self.omega_m)
    }

    pub fn validate(&self) -> Result<()> {
        positive("omega_m", self.omega_m)?;
        finite("omega_lc", self.omega_lc)?;
        finite("g", self.g)?;
        non_negative("t_max", self.t_max())?;
        at_least("samples", self.samples, 1)?;
        positive("step_tol", self.step_tol)?;
        positive("tail_tol", self.tail_tol)?;
        at_least("dim_a", self.dim_a, 1)?;
        at_least("dim_b", self.dim_b, 2)?;
        if let Some(amps) = &self.initial_lc {
            if amps.len() != self.dim_a {
                return Err(Error::param("initial_lc", format!("need {} amplitudes, got {}", self.dim_a, amps.len())));
            }
        }
        Ok(())
    }
}

/// Full modulated evolution against the effective static model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareRwa {
    pub dim_a: usize,
    pub dim_b: usize,
    pub g_max: f64,
    pub eta: f64,
    pub nu: f64,
    /// `δ = Ω − ν`; the mechanical frequency follows from it.
    pub delta: f64,
    pub omega_lc: f64,
    /// Real amplitude of the initial LC coherent state.
    pub alpha: f64,
    /// Defaults to one detuning period `2π/|δ|`.
    pub duration: Option<f64>,
    pub samples: usize,
    pub step_tol: f64,
    /// Step-doubling ceiling per propagation.
    pub max_steps: usize,
    pub tail_tol: f64,
}

impl Default for CompareRwa {
    fn default() -> Self {
        Self {
            dim_a: 9,
            dim_b: 30,
            g_max: 0.5,
            eta: 1.0,
            nu: 20.0,
            delta: 1.0,
            omega_lc: 0.0,
            alpha: 0.5,
            duration: None,
            samples: 4,
            step_tol: 1e-8,
            max_steps: StepControl::default().max_steps,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

impl CompareRwa {
    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(2.0 * PI / self.delta.abs())
    }

    pub fn omega_m(&self) -> f64 {
        self.nu + self.delta
    }

    /// `g_max/ν`; the effective model needs this small.
    pub fn validity_ratio(&self) -> f64 {
        self.g_max / self.nu
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("g_max", self.g_max)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        positive("nu", self.nu)?;
        finite("delta", self.delta)?;
        positive("omega_m", self.omega_m())?;
        finite("omega_lc", self.omega_lc)?;
        finite("alpha", self.alpha)?;
        positive("duration", self.duration())?;
        at_least("samples", self.samples, 1)?;
        positive("step_tol", self.step_tol)?;
        at_least("max_steps", self.max_steps, 1)?;
        positive("tail_tol", self.tail_tol)?;
        at_least("dim_a", self.dim_a, 1)?;
        at_least("dim_b", self.dim_b, 2)?;
        Ok(())
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            tol: self.step_tol,
            max_steps: self.max_steps,
            ..StepControl::default()
        }
    }
}

/// Cat preparation by the modulated coupling at `η = 1`, `δ = g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatPrep {
    pub g: f64,
    pub g_over_nu: f64,
    pub alpha: f64,
    pub omega_lc: f64,
    pub dim_a: usize,
    pub dim_b: usize,
    pub step_tol: f64,
    pub max_steps: usize,
    /// Bound on the mechanical top-level population during the run.
    pub tail_tol: f64,
}

impl Default for CatPrep {
    fn default() -> Self {
        Self {
            g: 1.0,
            g_over_nu: 0.01,
            alpha: 1.5,
            omega_lc: 0.0,
            dim_a: 15,
            dim_b: 40,
            step_tol: 1e-8,
            max_steps: StepControl::default().max_steps,
            tail_tol: 1e-2,
        }
    }
}

impl CatPrep {
    pub fn validate(&self) -> Result<()> {
        positive("g", self.g)?;
        positive("g_over_nu", self.g_over_nu)?;
        finite("alpha", self.alpha)?;
        finite("omega_lc", self.omega_lc)?;
        positive("step_tol", self.step_tol)?;
        at_least("max_steps", self.max_steps, 1)?;
        positive("tail_tol", self.tail_tol)?;
        at_least("dim_a", self.dim_a, 1)?;
        at_least("dim_b", self.dim_b, 2)?;
        Ok(())
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            tol: self.step_tol,
            max_steps: self.max_steps,
            ..StepControl::default()
        }
    }
}

/// τ and segment-count grid; the optimizer settings come from `[optimize]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanTau {
    pub taus: Vec<f64>,
    pub segment_counts: Vec<usize>,
}

impl Default for ScanTau {
    fn default() -> Self {
        Self {
            taus: vec![0.8, 0.9, 0.95, 0.99, 1.0],
            segment_counts: vec![10, 15],
        }
    }
}

impl ScanTau {
    pub fn validate(&self, base: &OptimizeConfig) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::param("taus", "need at least one duration"));
        }
        if self.segment_counts.is_empty() {
            return Err(Error::param("segment_counts", "need at least one segment count"));
        }
        for &tau in &self.taus {
            positive("taus", tau)?;
        }
        for &segments in &self.segment_counts {
            at_least("segment_counts", segments, 1)?;
        }
        base.validate()
    }
}

/// Mean mechanical amplitude under resonant photon pressure with damping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonPressure {
    pub g_rad_per_s: f64,
    pub photons: u32,
    pub omega_m_rad_per_s: f64,
    pub quality_factor: f64,
    pub damping: DampingConvention,
    /// Defaults to ten damping times.
    pub t_max_s: Option<f64>,
    pub samples: usize,
}

impl Default for PhotonPressure {
    fn default() -> Self {
        Self {
            g_rad_per_s: 5780.0,
            photons: 10,
            omega_m_rad_per_s: angular_frequency(1e7),
            quality_factor: 1e5,
            damping: DampingConvention::OmegaOverQ,
            t_max_s: None,
            samples: 101,
        }
    }
}

impl PhotonPressure {
    pub fn gamma(&self) -> f64 {
        self.damping.gamma(self.omega_m_rad_per_s, self.quality_factor)
    }

    pub fn t_max_s(&self) -> f64 {
        self.t_max_s.unwrap_or(10.0 / self.gamma())
    }

    pub fn validate(&self) -> Result<()> {
        positive("g_rad_per_s", self.g_rad_per_s)?;
        positive("omega_m_rad_per_s", self.omega_m_rad_per_s)?;
        positive("quality_factor", self.quality_factor)?;
        positive("t_max_s", self.t_max_s())?;
        at_least("samples", self.samples, 2)?;
        Ok(())
    }
}

/// Kerr enhancement and displacement estimates, plus optional device numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitDesign {
    pub kerr_g_rad_per_s: f64,
    pub omega_m_rad_per_s: f64,
    pub eta: f64,
    pub drive_g_rad_per_s: f64,
    pub photons: u32,
    pub quality_factor: f64,
    /// Device parameters for the coupling and junction numbers.
    pub circuit: Option<CircuitParams>,
    /// Flux modulation frequency for the adiabaticity report; needs `circuit`.
    pub modulation_rad_per_s: Option<f64>,
}

impl Default for CircuitDesign {
    fn default() -> Self {
        let e = EnhancementInputs::example();
        Self {
            kerr_g_rad_per_s: e.kerr_g_rad_per_s,
            omega_m_rad_per_s: e.omega_m_rad_per_s,
            eta: e.eta,
            drive_g_rad_per_s: e.drive_g_rad_per_s,
            photons: e.photons,
            quality_factor: e.quality_factor,
            circuit: None,
            modulation_rad_per_s: None,
        }
    }
}

impl CircuitDesign {
    pub fn inputs(&self) -> EnhancementInputs {
        EnhancementInputs {
            kerr_g_rad_per_s: self.kerr_g_rad_per_s,
            omega_m_rad_per_s: self.omega_m_rad_per_s,
            eta: self.eta,
            drive_g_rad_per_s: self.drive_g_rad_per_s,
            photons: self.photons,
            quality_factor: self.quality_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("kerr_g_rad_per_s", self.kerr_g_rad_per_s)?;
        positive("omega_m_rad_per_s", self.omega_m_rad_per_s)?;
        positive("drive_g_rad_per_s", self.drive_g_rad_per_s)?;
        positive("quality_factor", self.quality_factor)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if let Some(cp) = &self.circuit {
            cp.validate()?;
        }
        if let Some(nu) = self.modulation_rad_per_s {
            non_negative("modulation_rad_per_s", nu)?;
            if self.circuit.is_none() {
                return Err(Error::param("modulation_rad_per_s", "needs a [circuit-design.circuit] table"));
            }
        }
        Ok(())
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be non-negative and finite, got {v}")))
    }
}

fn at_least(name: &'static str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::param(name, format!("need at least {min}, got {v}")))
    }
}

/// Read a config file and apply `key.path=value` overrides before parsing.
pub fn load(path: &Path, overrides: &[String]) -> std::result::Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(None, format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Failure::config(None, e.to_string()))?;
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| Failure::config(Some(e.path().to_string()), e.inner().to_string()))
}

fn apply_override(table: &mut toml::Table, item: &str) -> std::result::Result<(), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::config(None, format!("override `{item}` is not key=value")))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Failure::config(Some(key.to_string()), "empty key in override".to_string()));
    }
    // anything that is not a TOML literal is taken as a bare string
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::config(Some(keys[..=i].join(".")), "not a table".to_string()))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
