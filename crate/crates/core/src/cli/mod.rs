//! `modumech` command line: config ingestion, experiment dispatch and
//! deterministic result artifacts.
//!
//! Exit codes: 0 success, 2 configuration or parameter error, 3 physics
//! guard (truncation, out-of-branch flux), 4 numerical failure, 1 I/O.

pub mod config;
pub mod experiments;
pub mod table;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::circuit::{FLUX_QUANTUM, HBAR};
use crate::error::Error;
use crate::hilbert::DEFAULT_TAIL_TOL;
use config::{ConfigFile, Format};
use experiments::{Diagnostic, Outcome};

#[derive(Debug, Parser)]
#[command(name = "modumech", version, about = "Modulated electromechanics: simulation, control and circuit estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact and numeric evolution with a static coupling.
    Propagate(RunArgs),
    /// Modulated evolution against the effective static model.
    CompareRwa(RunArgs),
    /// Cat preparation by the modulated coupling.
    CatPrep(RunArgs),
    /// Optimize a piecewise-constant control schedule.
    Optimize(RunArgs),
    /// Optimal error over a grid of durations and segment counts.
    ScanTau(RunArgs),
    /// Damped mean mechanical amplitude under photon pressure.
    PhotonPressure(RunArgs),
    /// Kerr enhancement, displacement and device estimates.
    CircuitDesign(RunArgs),
    /// Check a config file and run the physics pre-flight without simulating.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set propagate.g=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `modumech-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// A failed run, reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub path: Option<String>,
    pub message: String,
}

impl Failure {
    pub fn config(path: Option<String>, message: String) -> Self {
        Self {
            code: 2,
            kind: "config",
            path,
            message,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            kind: "io",
            path: None,
            message: format!("{}: {e}", path.display()),
        }
    }

    /// A library error raised while handling `section`.
    pub fn from_error(section: &str, e: Error) -> Self {
        let (code, kind, path) = match &e {
            Error::InvalidParameter { name, .. } => (2, "invalid-parameter", Some(format!("{section}.{name}"))),
            Error::InvalidDimension { .. } | Error::DimensionMismatch { .. } => (2, "dimension", None),
            Error::Truncation { .. } => (3, "truncation", None),
            Error::OutOfBranch { .. } => (3, "out-of-branch", None),
            Error::StepControl { .. } => (4, "step-control", None),
        };
        Self {
            code,
            kind,
            path,
            message: e.to_string(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind, "exit_code": self.code, "path": self.path, "message": self.message })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Propagate,
    CompareRwa,
    CatPrep,
    Optimize,
    ScanTau,
    PhotonPressure,
    CircuitDesign,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Propagate => "propagate",
            Experiment::CompareRwa => "compare-rwa",
            Experiment::CatPrep => "cat-prep",
            Experiment::Optimize => "optimize",
            Experiment::ScanTau => "scan-tau",
            Experiment::PhotonPressure => "photon-pressure",
            Experiment::CircuitDesign => "circuit-design",
        }
    }
}

/// What a successful run wrote.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: PathBuf,
    pub table: PathBuf,
    pub summary: Vec<(String, Value)>,
}

fn seed_optimizer(file: &ConfigFile, seed: u64) -> crate::control::OptimizeConfig {
    let mut cfg = file.optimize.clone().unwrap_or_default();
    cfg.seed = seed;
    cfg
}

fn execute(exp: Experiment, file: &ConfigFile, seed: u64) -> Result<Outcome, Failure> {
    let name = exp.name();
    let wrap = |e| Failure::from_error(name, e);
    match exp {
        Experiment::Propagate => experiments::propagate(&file.propagate.clone().unwrap_or_default()).map_err(wrap),
        Experiment::CompareRwa => experiments::compare_rwa(&file.compare_rwa.clone().unwrap_or_default()).map_err(wrap),
        Experiment::CatPrep => experiments::cat_prep(&file.cat_prep.clone().unwrap_or_default()).map_err(wrap),
        Experiment::Optimize => experiments::optimize_schedule(&seed_optimizer(file, seed)).map_err(wrap),
        Experiment::ScanTau => {
            let base = seed_optimizer(file, seed);
            let scan = file.scan_tau.clone().unwrap_or_default();
            // grid errors belong to the scan section, the rest to the optimizer
            scan.validate(&base).map_err(|e| match &e {
                Error::InvalidParameter { name: "taus" | "segment_counts", .. } => Failure::from_error("scan-tau", e),
                _ => Failure::from_error("optimize", e),
            })?;
            experiments::scan_tau(&scan, &base).map_err(wrap)
        }
        Experiment::PhotonPressure => {
            experiments::photon_pressure(&file.photon_pressure.clone().unwrap_or_default()).map_err(wrap)
        }
        Experiment::CircuitDesign => {
            experiments::circuit_design(&file.circuit_design.clone().unwrap_or_default()).map_err(wrap)
        }
    }
}

/// Run one experiment and write `manifest.json` and `<experiment>.<format>`
/// into the output directory.
pub fn run(exp: Experiment, args: &RunArgs) -> Result<RunReport, Failure> {
    let file = config::load(&args.config, &args.overrides)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let format = args.format.or(file.format).unwrap_or(Format::Csv);
    let out_dir = args
        .out
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("modumech-out"));

    let outcome = execute(exp, &file, seed)?;

    fs::create_dir_all(&out_dir).map_err(|e| Failure::io(&out_dir, e))?;
    let table_name = format!("{}.{}", exp.name(), format.extension());
    let table_path = out_dir.join(&table_name);
    let body = match format {
        Format::Csv => outcome.table.to_csv(),
        Format::Json => pretty(&outcome.table.to_json()),
    };
    fs::write(&table_path, body).map_err(|e| Failure::io(&table_path, e))?;

    let summary: Map<String, Value> = outcome.summary.iter().cloned().collect();
    let manifest = json!({
        "tool": "modumech",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": exp.name(),
        "seed": seed,
        "format": format,
        "config": outcome.config,
        "numerics": outcome.numerics,
        "constants": {
            "flux_quantum_wb": FLUX_QUANTUM,
            "hbar_j_s": HBAR,
            "default_tail_tol": DEFAULT_TAIL_TOL,
            "rwa_warn_ratio": experiments::RWA_WARN_RATIO,
        },
        "outputs": [table_name],
        "summary": summary,
    });
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, pretty(&manifest)).map_err(|e| Failure::io(&manifest_path, e))?;
    Ok(RunReport {
        manifest: manifest_path,
        table: table_path,
        summary: outcome.summary,
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Schema check of every section present plus the physics pre-flight.
pub fn validate(args: &ValidateArgs) -> Result<Vec<Diagnostic>, Failure> {
    let file = config::load(&args.config, &args.overrides)?;
    let mut out = Vec::new();
    let check = |section: &str, r: crate::Result<Vec<Diagnostic>>| r.map_err(|e| Failure::from_error(section, e));
    if let Some(c) = &file.propagate {
        out.extend(check("propagate", experiments::preflight_propagate(c))?);
    }
    if let Some(c) = &file.compare_rwa {
        out.extend(check("compare-rwa", experiments::preflight_compare_rwa(c))?);
    }
    if let Some(c) = &file.cat_prep {
        out.extend(check("cat-prep", experiments::preflight_cat_prep(c))?);
    }
    if let Some(c) = &file.optimize {
        check("optimize", c.validate().map(|_| Vec::new()))?;
    }
    if let Some(c) = &file.scan_tau {
        c.validate(&file.optimize.clone().unwrap_or_default())
            .map_err(|e| Failure::from_error("scan-tau", e))?;
    }
    if let Some(c) = &file.photon_pressure {
        check("photon-pressure", c.validate().map(|_| Vec::new()))?;
    }
    if let Some(c) = &file.circuit_design {
        out.extend(check("circuit-design", experiments::preflight_circuit(c))?);
    }
    Ok(out)
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (exp, run_args) = match cli.command {
        Command::Validate(v) => {
            return match validate(&v) {
                Ok(diags) => {
                    println!("{}", pretty(&json!({ "diagnostics": diags })).trim_end());
                    0
                }
                Err(f) => fail(&f),
            };
        }
        Command::Propagate(a) => (Experiment::Propagate, a),
        Command::CompareRwa(a) => (Experiment::CompareRwa, a),
        Command::CatPrep(a) => (Experiment::CatPrep, a),
        Command::Optimize(a) => (Experiment::Optimize, a),
        Command::ScanTau(a) => (Experiment::ScanTau, a),
        Command::PhotonPressure(a) => (Experiment::PhotonPressure, a),
        Command::CircuitDesign(a) => (Experiment::CircuitDesign, a),
    };
    match run(exp, &run_args) {
        Ok(report) => {
            for (k, v) in &report.summary {
                println!("{k}: {v}");
            }
            println!("wrote {}", report.table.display());
            println!("wrote {}", report.manifest.display());
            0
        }
        Err(f) => fail(&f),
    }
}

fn fail(f: &Failure) -> i32 {
    eprintln!("{}", f.to_json());
    f.code
}
