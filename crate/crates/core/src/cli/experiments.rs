//! One runner per experiment, plus the pre-flight checks behind `validate`.

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{CatPrep, CircuitDesign, CompareRwa, PhotonPressure, Propagate, ScanTau};
use super::table::{flag, Table};
use crate::circuit::{adiabaticity_report, derive, enhancement_estimates, AdiabaticityOptions};
use crate::control::{optimize, tau_scan, OptimizeConfig};
use crate::dynamics::{analytic_propagator, mechanical_quadratures, propagate_interval, StepControl, SystemParams};
use crate::error::Result;
use crate::hilbert::{coherent_state_with_tol, fidelity, FockSpace, Space, StateVector, TailGuard};
use crate::linalg::CVector;
use crate::modulation::{
    damped_mean_evolution, rwa_error, simulate_cat_preparation, steady_state, CatPreparation, ModulationParams,
};

/// `g/ν` above this draws a warning.
pub const RWA_WARN_RATIO: f64 = 0.1;

pub struct Outcome {
    /// The section as resolved, defaults filled in.
    pub config: Value,
    /// Numerical settings that are not part of the section.
    pub numerics: Value,
    pub table: Table,
    pub summary: Vec<(String, Value)>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn lc_state(dim: usize, amps: &Option<Vec<f64>>) -> Result<StateVector> {
    match amps {
        None => StateVector::uniform_superposition(dim, dim),
        Some(a) => StateVector::from_amplitudes(
            Space::Mode(dim),
            CVector::from_iterator(a.len(), a.iter().map(|&x| Complex64::new(x, 0.0))),
        ),
    }
}

pub fn propagate(cfg: &Propagate) -> Result<Outcome> {
    cfg.validate()?;
    let space = FockSpace::new(cfg.dim_a, cfg.dim_b)?;
    let params = SystemParams::new(cfg.omega_lc, cfg.omega_m, cfg.g);
    let free = SystemParams { g: 0.0, ..params };
    let ctl = StepControl::with_tol(cfg.step_tol);
    let guard = TailGuard::with_tol(cfg.tail_tol);
    let psi0 = StateVector::product(&lc_state(cfg.dim_a, &cfg.initial_lc)?, &StateVector::fock(cfg.dim_b, 0)?)?;

    let mut table = Table::new(&[
        ("t", "1/rate"),
        ("fidelity_numeric", "1"),
        ("fidelity_free", "1"),
        ("x_mech", "1"),
        ("p_mech", "1"),
        ("entanglement_entropy", "nat"),
        ("mech_tail", "1"),
    ]);
    let t_max = cfg.t_max();
    let mut numeric = psi0.clone();
    let mut t_prev = 0.0;
    let mut last = psi0.clone();
    for k in 0..cfg.samples {
        let t = if cfg.samples == 1 { t_max } else { t_max * k as f64 / (cfg.samples - 1) as f64 };
        numeric = propagate_interval(&params, &numeric, t_prev, t, &ctl, &guard)?;
        t_prev = t;
        let exact = analytic_propagator(&params, t, space)?.evolve(&psi0, &guard)?;
        let rotated = analytic_propagator(&free, t, space)?.evolve(&psi0, &TailGuard::disabled())?;
        let (x, p) = mechanical_quadratures(&exact)?;
        table.push(vec![
            t,
            fidelity(&exact, &numeric)?,
            fidelity(&exact, &rotated)?,
            x,
            p,
            exact.entanglement_entropy()?,
            exact.tail_populations().1,
        ]);
        last = exact;
    }
    let back = analytic_propagator(&params, t_max, space)?.adjoint().evolve(&last, &TailGuard::disabled())?;
    let min_fid = table.column("fidelity_numeric").unwrap_or_default().into_iter().fold(1.0, f64::min);
    Ok(Outcome {
        config: to_value(cfg),
        numerics: json!({ "step_control": ctl, "tail_guard": guard }),
        table,
        summary: vec![
            ("min_fidelity_numeric".into(), json!(min_fid)),
            ("round_trip_fidelity".into(), json!(fidelity(&back, &psi0)?)),
        ],
    })
}

pub fn compare_rwa(cfg: &CompareRwa) -> Result<Outcome> {
    cfg.validate()?;
    let omega_m = cfg.omega_m();
    let mp = ModulationParams::with_detuning(cfg.g_max, cfg.eta, omega_m, cfg.delta)?;
    let params = SystemParams::new(cfg.omega_lc, omega_m, 0.0);
    let ctl = cfg.step_control();
    let guard = TailGuard::with_tol(cfg.tail_tol);
    let lc = coherent_state_with_tol(Complex64::new(cfg.alpha, 0.0), cfg.dim_a, cfg.tail_tol)?;
    let psi0 = StateVector::product(&lc, &StateVector::fock(cfg.dim_b, 0)?)?;

    let mut table = Table::new(&[("t", "1/rate"), ("rwa_error", "1")]);
    let duration = cfg.duration();
    for k in 1..=cfg.samples {
        let t = duration * k as f64 / cfg.samples as f64;
        table.push(vec![t, rwa_error(&mp, &params, &psi0, t, &ctl, &guard)?]);
    }
    let max_err = table.column("rwa_error").unwrap_or_default().into_iter().fold(0.0, f64::max);
    Ok(Outcome {
        config: to_value(cfg),
        numerics: json!({ "step_control": ctl, "tail_guard": guard, "omega_m": omega_m }),
        table,
        summary: vec![
            ("validity_ratio".into(), json!(cfg.validity_ratio())),
            ("max_rwa_error".into(), json!(max_err)),
        ],
    })
}

pub fn cat_prep(cfg: &CatPrep) -> Result<Outcome> {
    cfg.validate()?;
    let ctl = cfg.step_control();
    let run = CatPreparation {
        g: cfg.g,
        g_over_nu: cfg.g_over_nu,
        alpha: cfg.alpha,
        omega_lc: cfg.omega_lc,
        space: FockSpace::new(cfg.dim_a, cfg.dim_b)?,
        tail_tol: cfg.tail_tol,
    };
    let r = simulate_cat_preparation(&run, &ctl)?;
    let table = Table::single(&[
        ("fidelity", "1", r.fidelity),
        ("theta", "rad", r.theta),
        ("tau", "1/rate", r.tau),
        ("nu", "rate", r.nu),
        ("omega_m", "rate", r.omega_m),
        ("delta", "rate", r.delta),
        ("mech_tail", "1", r.mech_tail),
    ]);
    Ok(Outcome {
        config: to_value(cfg),
        numerics: json!({ "step_control": ctl, "eta": 1.0 }),
        table,
        summary: vec![("fidelity".into(), json!(r.fidelity)), ("mech_tail".into(), json!(r.mech_tail))],
    })
}

pub fn optimize_schedule(cfg: &OptimizeConfig) -> Result<Outcome> {
    cfg.validate()?;
    let res = optimize(cfg)?;
    let s = &res.schedule;
    let dt = s.segment_duration();
    let mut table = Table::new(&[("segment", "1"), ("t_start", "1/rate"), ("t_end", "1/rate"), ("g", "rate"), ("omega_m", "rate")]);
    for (k, (g, w)) in s.g_values.iter().zip(&s.omega_values).enumerate() {
        table.push(vec![k as f64, k as f64 * dt, (k + 1) as f64 * dt, *g, *w]);
    }
    Ok(Outcome {
        config: to_value(cfg),
        numerics: json!({ "omega_range": cfg.omega_range() }),
        table,
        summary: vec![
            ("epsilon".into(), json!(res.epsilon)),
            ("fidelity".into(), json!(res.fidelity)),
            ("iterations".into(), json!(res.iterations)),
            ("converged".into(), json!(res.converged)),
            ("mech_tail".into(), json!(res.mech_tail)),
            ("truncation_ok".into(), json!(res.truncation_ok)),
            ("restart_epsilons".into(), json!(res.restart_epsilons)),
        ],
    })
}

pub fn scan_tau(scan: &ScanTau, base: &OptimizeConfig) -> Result<Outcome> {
    scan.validate(base)?;
    let rows = tau_scan(base, &scan.taus, &scan.segment_counts)?;
    let mut table = Table::new(&[
        ("tau", "1/rate"),
        ("segments", "1"),
        ("epsilon", "1"),
        ("fidelity", "1"),
        ("iterations", "1"),
        ("converged", "flag"),
        ("truncation_ok", "flag"),
        ("monotonicity_violation", "flag"),
        ("segment_count_violation", "flag"),
    ]);
    for r in &rows {
        table.push(vec![
            r.tau,
            r.segments as f64,
            r.epsilon,
            r.fidelity,
            r.iterations as f64,
            flag(r.converged),
            flag(r.truncation_ok),
            flag(r.monotonicity_violation),
            flag(r.segment_count_violation),
        ]);
    }
    let violations = rows.iter().filter(|r| r.monotonicity_violation || r.segment_count_violation).count();
    Ok(Outcome {
        config: json!({ "scan": to_value(scan), "optimizer": to_value(base) }),
        numerics: json!({ "omega_range": base.omega_range() }),
        table,
        summary: vec![("flagged_rows".into(), json!(violations))],
    })
}

pub fn photon_pressure(cfg: &PhotonPressure) -> Result<Outcome> {
    cfg.validate()?;
    let gamma = cfg.gamma();
    let t_max = cfg.t_max_s();
    let mut table = Table::new(&[
        ("t", "s"),
        ("beta_re", "1"),
        ("beta_im", "1"),
        ("phonons", "1"),
        ("delta_s", "1"),
    ]);
    for k in 0..cfg.samples {
        let t = t_max * k as f64 / (cfg.samples - 1) as f64;
        let r = damped_mean_evolution(cfg.g_rad_per_s, cfg.photons, gamma, t)?;
        table.push(vec![t, r.beta.re, r.beta.im, r.phonons, r.delta_s]);
    }
    let ss = steady_state(cfg.g_rad_per_s, cfg.photons, gamma)?;
    let undamped = damped_mean_evolution(cfg.g_rad_per_s, cfg.photons, 0.0, 1.0 / cfg.g_rad_per_s)?;
    Ok(Outcome {
        config: to_value(cfg),
        numerics: json!({ "gamma_rad_per_s": gamma, "t_max_s": t_max }),
        table,
        summary: vec![
            ("gamma_rad_per_s".into(), json!(gamma)),
            ("steady_delta_s".into(), json!(ss.report.delta_s)),
            ("steady_phonons".into(), json!(ss.report.phonons)),
            ("steady_phonons_alt".into(), json!(ss.phonons_alt)),
            ("undamped_phonons_at_inverse_g".into(), json!(undamped.phonons)),
        ],
    })
}

pub fn circuit_design(cfg: &CircuitDesign) -> Result<Outcome> {
    cfg.validate()?;
    let r = enhancement_estimates(&cfg.inputs())?;
    let mut cols: Vec<(String, &str, f64)> = vec![
        ("chi_modulated".into(), "1/s", r.chi_modulated),
        ("chi_static".into(), "1/s", r.chi_static),
        ("enhancement_ratio".into(), "1", r.enhancement_ratio),
        ("quoted_enhancement_ratio".into(), "1", r.quoted_enhancement_ratio),
        ("enhancement_discrepancy".into(), "flag", flag(r.enhancement_discrepancy)),
        ("drive_time".into(), "s", r.drive_time),
        ("phonons_at_drive_time".into(), "1", r.phonons_at_drive_time),
        ("momentum_rate".into(), "1/s", r.momentum_rate),
    ];
    for s in &r.steady {
        let tag = match serde_json::to_value(s.convention) {
            Ok(Value::String(t)) => t.replace('-', "_"),
            _ => unreachable!("conventions serialize as strings"),
        };
        cols.push((format!("gamma_{tag}"), "1/s", s.gamma));
        cols.push((format!("delta_s_{tag}"), "1", s.delta_s));
        cols.push((format!("phonons_{tag}"), "1", s.phonons));
        cols.push((format!("phonons_alt_{tag}"), "1", s.phonons_alt));
        cols.push((format!("amplitude_alt_{tag}"), "1", s.amplitude_alt));
    }
    cols.push(("quoted_steady_phonons".into(), "1", r.quoted_steady_phonons));
    cols.push(("steady_discrepancy".into(), "flag", flag(r.steady_discrepancy)));

    let mut numerics = json!({});
    if let Some(cp) = &cfg.circuit {
        let d = derive(cp)?;
        cols.push(("omega_max".into(), "rad/s", d.omega_max));
        cols.push(("x_zp".into(), "m", d.x_zp));
        cols.push(("g_max".into(), "rad/s", d.g_max));
        cols.push(("l_j".into(), "H", d.l_j));
        if let Some(nu) = cfg.modulation_rad_per_s {
            let opts = AdiabaticityOptions::default();
            let a = adiabaticity_report(nu, cp, &opts)?;
            cols.push(("ratio_nu_omega_max".into(), "1", a.ratio_nu_omega_max));
            cols.push(("omega_min_floored".into(), "rad/s", a.omega_min_floored));
            cols.push(("ratio_nu_omega".into(), "1", a.ratio_nu_omega));
            cols.push(("dphi_per_lc_period".into(), "1", a.dphi_per_lc_period));
            cols.push(("adiabatic_ok".into(), "flag", flag(a.ok)));
            numerics = json!({ "adiabaticity": opts });
        }
    }
    let entries: Vec<(&str, &str, f64)> = cols.iter().map(|(n, u, v)| (n.as_str(), *u, *v)).collect();
    Ok(Outcome {
        config: to_value(cfg),
        numerics,
        table: Table::single(&entries),
        summary: vec![
            ("chi_modulated".into(), json!(r.chi_modulated)),
            ("enhancement_ratio".into(), json!(r.enhancement_ratio)),
            ("quoted_enhancement_ratio".into(), json!(r.quoted_enhancement_ratio)),
            ("enhancement_discrepancy".into(), json!(r.enhancement_discrepancy)),
            ("steady_discrepancy".into(), json!(r.steady_discrepancy)),
        ],
    })
}

/// Top-level population of a coherent state of mean phonon number `nbar`.
fn poisson_top(nbar: f64, top: usize) -> f64 {
    if nbar == 0.0 {
        return if top == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (1..=top).map(|k| (k as f64).ln()).sum();
    (-nbar + top as f64 * nbar.ln() - ln_fact).exp()
}

/// Worst-case mechanical top-level population: each photon-number block
/// displaces the mechanics coherently to at most `reach(n)`.
pub fn tail_estimate(photon_weights: &[f64], dim_b: usize, reach: impl Fn(f64) -> f64) -> f64 {
    photon_weights
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let beta = reach(n as f64);
            w * poisson_top(beta * beta, dim_b - 1)
        })
        .sum()
}

fn coherent_weights(alpha: f64, dim: usize) -> Vec<f64> {
    let nbar = alpha * alpha;
    (0..dim).map(|n| poisson_top(nbar, n)).collect()
}

/// `|β|` reached by a mechanics driven at rate `g n` with detuning `δ` over `t`.
fn detuned_reach(g: f64, delta: f64, t: f64) -> impl Fn(f64) -> f64 {
    move |n| {
        let linear = g * n * t;
        if delta == 0.0 {
            linear
        } else {
            linear.min(2.0 * g * n / delta.abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub level: &'static str,
    pub experiment: &'static str,
    pub message: String,
}

fn warn(experiment: &'static str, message: String) -> Diagnostic {
    Diagnostic {
        level: "warning",
        experiment,
        message,
    }
}

fn tail_warning(experiment: &'static str, est: f64, tol: f64) -> Option<Diagnostic> {
    (est > tol).then(|| warn(experiment, format!("tail-guard estimate {est:.2e} exceeds tail_tol {tol:.1e}; increase dim_b")))
}

pub fn preflight_propagate(cfg: &Propagate) -> Result<Vec<Diagnostic>> {
    cfg.validate()?;
    let lc = lc_state(cfg.dim_a, &cfg.initial_lc)?;
    let w: Vec<f64> = lc.amplitudes().iter().map(|z| z.norm_sqr()).collect();
    let reach = |n: f64| 2.0 * cfg.g.abs() * n / cfg.omega_m;
    Ok(tail_warning("propagate", tail_estimate(&w, cfg.dim_b, reach), cfg.tail_tol).into_iter().collect())
}

pub fn preflight_compare_rwa(cfg: &CompareRwa) -> Result<Vec<Diagnostic>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let ratio = cfg.validity_ratio();
    if ratio > RWA_WARN_RATIO {
        out.push(warn("compare-rwa", format!("RWA validity ratio large: g/nu = {ratio:.3}")));
    }
    let w = coherent_weights(cfg.alpha, cfg.dim_a);
    let est = tail_estimate(&w, cfg.dim_b, detuned_reach(0.5 * cfg.eta * cfg.g_max, cfg.delta, cfg.duration()));
    out.extend(tail_warning("compare-rwa", est, cfg.tail_tol));
    Ok(out)
}

pub fn preflight_cat_prep(cfg: &CatPrep) -> Result<Vec<Diagnostic>> {
    cfg.validate()?;
    let mut out = Vec::new();
    if cfg.g_over_nu > RWA_WARN_RATIO {
        out.push(warn("cat-prep", format!("RWA validity ratio large: g/nu = {:.3}", cfg.g_over_nu)));
    }
    // δ = g, τ = 2π/g, effective coupling g/2: block n reaches |β| = n
    let w = coherent_weights(cfg.alpha, cfg.dim_a);
    let est = tail_estimate(&w, cfg.dim_b, detuned_reach(0.5 * cfg.g, cfg.g, 2.0 * std::f64::consts::PI / cfg.g));
    out.extend(tail_warning("cat-prep", est, cfg.tail_tol));
    Ok(out)
}

pub fn preflight_circuit(cfg: &CircuitDesign) -> Result<Vec<Diagnostic>> {
    cfg.validate()?;
    let mut out = Vec::new();
    if let (Some(cp), Some(nu)) = (&cfg.circuit, cfg.modulation_rad_per_s) {
        let a = adiabaticity_report(nu, cp, &AdiabaticityOptions::default())?;
        if !a.ok {
            out.push(warn(
                "circuit-design",
                format!("flux modulation not adiabatic: nu/omega_min = {:.3e}", a.ratio_nu_omega),
            ));
        }
    }
    Ok(out)
}
