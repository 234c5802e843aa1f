//! Modulated coupling `g(t) = g_max[(1−η) + η cos νt]` and its consequences.
//!
//! In the frame rotating at `ν b†b`, and dropping terms oscillating at `ν`
//! and `2ν`, the modulated system behaves like the static one with
//! `Ω → δ = Ω − ν` and `g → ηg_max/2`. The Kerr rate becomes `g²/(4δ)`
//! and, on resonance (`δ = 0`), photons push the mechanics linearly in time.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_state, propagate_tracked, Schedule, StepControl, SystemParams};
use crate::error::{Error, Result};
use crate::hilbert::{
    cat_state_with_tol, coherent_state_with_tol, fidelity, fidelity_with_density, FockSpace, Mode, Space,
    StateVector, TailGuard,
};
use crate::linalg::CVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    /// Bare coupling amplitude.
    pub g_max: f64,
    /// Modulation depth, `0 ≤ η ≤ 1`.
    pub eta: f64,
    /// Modulation frequency ν.
    pub nu: f64,
    /// Detuning `δ = Ω − ν`.
    pub delta: f64,
}

impl ModulationParams {
    /// Modulation at `ν = Ω − δ`.
    pub fn with_detuning(g_max: f64, eta: f64, omega_m: f64, delta: f64) -> Result<Self> {
        let mp = Self {
            g_max,
            eta,
            nu: omega_m - delta,
            delta,
        };
        mp.validate()?;
        Ok(mp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_max >= 0.0 && self.g_max.is_finite()) {
            return Err(Error::param("g_max", format!("must be finite and non-negative, got {}", self.g_max)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::param("nu", format!("must be positive, got {}", self.nu)));
        }
        if !self.delta.is_finite() {
            return Err(Error::param("delta", "must be finite"));
        }
        Ok(())
    }

    /// Checks `ν = Ω − δ` for a given mechanical frequency.
    pub fn check_resonance(&self, omega_m: f64) -> Result<()> {
        let mismatch = (omega_m - self.delta - self.nu).abs();
        if mismatch > 1e-12 * omega_m.abs().max(1.0) {
            return Err(Error::param("nu", format!("ν = {} but Ω − δ = {}", self.nu, omega_m - self.delta)));
        }
        Ok(())
    }

    /// Oscillating coupling amplitude `η g_max`.
    pub fn amplitude(&self) -> f64 {
        self.eta * self.g_max
    }

    pub fn coupling_at(&self, t: f64) -> f64 {
        self.g_max * ((1.0 - self.eta) + self.eta * (self.nu * t).cos())
    }
}

/// Rates with the coupling modulated at ν; Ω and ω held constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatedSchedule {
    pub modulation: ModulationParams,
    pub omega_lc: f64,
    pub omega_m: f64,
    pub duration: f64,
}

impl ModulatedSchedule {
    pub fn with_lc_freq(mut self, omega_lc: f64) -> Self {
        self.omega_lc = omega_lc;
        self
    }
}

impl Schedule for ModulatedSchedule {
    fn params_at(&self, t: f64) -> SystemParams {
        SystemParams::new(self.omega_lc, self.omega_m, self.modulation.coupling_at(t))
    }

    fn period(&self) -> Option<f64> {
        Some(2.0 * PI / self.modulation.nu)
    }
}

pub fn modulated_schedule(mp: &ModulationParams, omega_m: f64, duration: f64) -> Result<ModulatedSchedule> {
    mp.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::param("duration", format!("must be positive, got {duration}")));
    }
    if !(omega_m > 0.0 && omega_m.is_finite()) {
        return Err(Error::param("omega_m", format!("must be positive, got {omega_m}")));
    }
    Ok(ModulatedSchedule {
        modulation: *mp,
        omega_lc: 0.0,
        omega_m,
        duration,
    })
}

/// Static model that the modulated one reduces to in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    /// `Ω → δ`, `g → g/2`.
    pub params: SystemParams,
    /// `g/ν`; the reduction needs this small.
    pub validity_ratio: f64,
}

impl EffectiveModel {
    pub fn detuning(&self) -> f64 {
        self.params.omega_m
    }

    /// `(g/2)²/δ = g²/(4δ)`.
    pub fn kerr_rate(&self) -> Result<f64> {
        let delta = self.params.omega_m;
        if delta == 0.0 {
            return Err(Error::param(
                "delta",
                "Kerr rate diverges at zero detuning; use the photon-pressure operations",
            ));
        }
        Ok(self.params.g * self.params.g / delta)
    }
}

/// `g` is the oscillating amplitude (`η g_max`).
pub fn effective_params(g: f64, omega_m: f64, delta: f64) -> Result<EffectiveModel> {
    if !(g.is_finite() && omega_m.is_finite() && delta.is_finite()) {
        return Err(Error::param("g", "rates must be finite"));
    }
    let nu = omega_m - delta;
    if nu <= 0.0 {
        return Err(Error::param("delta", format!("modulation frequency Ω − δ = {nu} must be positive")));
    }
    Ok(EffectiveModel {
        params: SystemParams::new(0.0, delta, 0.5 * g),
        validity_ratio: g.abs() / nu,
    })
}

/// `exp(+iν b†b t)`: lab frame to the frame rotating with the modulation.
pub fn to_rotating_frame(psi: &StateVector, nu: f64, t: f64) -> Result<StateVector> {
    let space = psi
        .joint_space()
        .ok_or_else(|| Error::param("psi", "expected a joint state"))?;
    let v = CVector::from_fn(space.dim(), |i, _| {
        let (_, nb) = space.levels(i);
        psi.amplitude(i) * Complex64::from_polar(1.0, nu * nb as f64 * t)
    });
    StateVector::from_amplitudes(Space::Joint(space), v)
}

/// Propagate with the effective model (exact, constant rates).
pub fn effective_evolution(model: &EffectiveModel, omega_lc: f64, psi0: &StateVector, t: f64, guard: &TailGuard) -> Result<StateVector> {
    let p = SystemParams {
        omega_lc,
        ..model.params
    };
    propagate_state(&p, psi0, t, &StepControl::default(), guard)
}

/// `1 − F` between the full modulated evolution (viewed in the rotating
/// frame) and the effective-model evolution.
pub fn rwa_error(
    mp: &ModulationParams,
    params: &SystemParams,
    psi0: &StateVector,
    t: f64,
    ctl: &StepControl,
    guard: &TailGuard,
) -> Result<f64> {
    mp.check_resonance(params.omega_m)?;
    let sched = modulated_schedule(mp, params.omega_m, t)?.with_lc_freq(params.omega_lc);
    let full = propagate_state(&sched, psi0, t, ctl, guard)?;
    let rotated = to_rotating_frame(&full, mp.nu, t)?;
    let model = effective_params(mp.amplitude(), params.omega_m, mp.delta)?;
    let eff = effective_evolution(&model, params.omega_lc, psi0, t, guard)?;
    Ok((1.0 - fidelity(&rotated, &eff)?).max(0.0))
}

/// Detuning/duration trade-off for cat preparation at `δ = g/(2r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatSchedule {
    pub delta: f64,
    pub tau: f64,
    pub chi: f64,
    /// `χτ`; cat preparation needs π/2.
    pub chi_tau: f64,
    pub prepares_cat: bool,
    /// `δτ` is a whole number of turns, so the mechanics returns to its start.
    pub decoupled: bool,
}

pub fn cat_schedule(g: f64, r: f64) -> Result<CatSchedule> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::param("g", format!("must be positive, got {g}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::param("r", format!("must be positive, got {r}")));
    }
    let delta = g / (2.0 * r);
    let chi = r * g / 2.0;
    let tau = r * 4.0 * PI / g;
    let chi_tau = chi * tau;
    let turns = delta * tau / (2.0 * PI);
    Ok(CatSchedule {
        delta,
        tau,
        chi,
        chi_tau,
        prepares_cat: (chi_tau - PI / 2.0).abs() < 1e-12,
        decoupled: (turns - turns.round()).abs() < 1e-12 && turns.round() >= 1.0,
    })
}

/// Inputs for a full-simulation cat preparation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatPreparation {
    pub g: f64,
    /// `g/ν`.
    pub g_over_nu: f64,
    pub alpha: f64,
    pub omega_lc: f64,
    pub space: FockSpace,
    pub tail_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatPreparationReport {
    pub fidelity: f64,
    /// Rotation of the cat amplitude predicted by the effective model.
    pub theta: f64,
    pub tau: f64,
    pub nu: f64,
    pub omega_m: f64,
    pub delta: f64,
    /// Largest mechanical top-level population bound seen during propagation.
    pub mech_tail: f64,
}

/// Start in `|α⟩ ⊗ |0⟩`, modulate with `η = 1`, `δ = g` (r = 1/2) for
/// `τ = 2π/g`, and compare the LC state to `cat(α e^{iθ})` with `θ = −ωτ`.
pub fn simulate_cat_preparation(cfg: &CatPreparation, ctl: &StepControl) -> Result<CatPreparationReport> {
    if !(cfg.g_over_nu > 0.0 && cfg.g_over_nu.is_finite()) {
        return Err(Error::param("g_over_nu", format!("must be positive, got {}", cfg.g_over_nu)));
    }
    let plan = cat_schedule(cfg.g, 0.5)?;
    let nu = cfg.g / cfg.g_over_nu;
    let omega_m = nu + plan.delta;
    let mp = ModulationParams::with_detuning(cfg.g, 1.0, omega_m, plan.delta)?;
    let sched = modulated_schedule(&mp, omega_m, plan.tau)?.with_lc_freq(cfg.omega_lc);

    let lc = coherent_state_with_tol(Complex64::new(cfg.alpha, 0.0), cfg.space.dim_a, cfg.tail_tol)?;
    let vac = StateVector::fock(cfg.space.dim_b, 0)?;
    let psi0 = StateVector::product(&lc, &vac)?;
    let run = propagate_tracked(&sched, &psi0, 0.0, plan.tau, ctl)?;
    if run.tail_bound > cfg.tail_tol {
        return Err(Error::Truncation {
            mode: Mode::B,
            tail: run.tail_bound,
            tol: cfg.tail_tol,
        });
    }
    let psi = run.state;

    let theta = (-cfg.omega_lc * plan.tau).rem_euclid(2.0 * PI);
    let target = cat_state_with_tol(Complex64::from_polar(cfg.alpha, theta), cfg.space.dim_a, cfg.tail_tol)?;
    let rho = psi.reduced_density(Mode::A)?;
    Ok(CatPreparationReport {
        fidelity: fidelity_with_density(&rho, &target)?,
        theta,
        tau: plan.tau,
        nu,
        omega_m,
        delta: plan.delta,
        mech_tail: run.tail_bound,
    })
}

/// Mechanical displacement summary for a coherent amplitude `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub beta: Complex64,
    /// `|β|²`.
    pub phonons: f64,
    /// Phase-space distance `√2 |β|` in the dimensionless quadratures.
    pub delta_s: f64,
    pub time: f64,
}

impl DisplacementReport {
    pub fn from_beta(beta: Complex64, time: f64) -> Self {
        Self {
            beta,
            phonons: beta.norm_sqr(),
            delta_s: SQRT_2 * beta.norm(),
            time,
        }
    }
}

/// Resonant photon-pressure drift of the momentum magnitude, `√2 (g/2) n t`.
///
/// With `x = (b+b†)/√2`, `p = −i(b−b†)/√2` and `g > 0` the simulated
/// `⟨p⟩` moves toward negative values at this rate.
pub fn momentum_drift(g: f64, n: u32, t: f64) -> f64 {
    SQRT_2 * 0.5 * g * n as f64 * t
}

/// Damping-limited displacement `g n / (√2 γ)`.
pub fn max_displacement(g: f64, n: u32, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(g * n as f64 / (SQRT_2 * gamma))
}

/// Reduced-depth form `√2 η (g_max/γ) n`.
///
/// At `η = 1` this is twice [`max_displacement`]; both are kept and
/// reported side by side.
pub fn max_displacement_with_depth(g_max: f64, eta: f64, n: u32, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param("eta", format!("must lie in [0, 1], got {eta}")));
    }
    Ok(SQRT_2 * eta * g_max / gamma * n as f64)
}

/// Kerr rate at depth η and optimal detuning, `η g_max / 4`.
pub fn kerr_rate_with_depth(g_max: f64, eta: f64) -> f64 {
    eta * g_max / 4.0
}

/// Undamped resonant drive from vacuum: `β(t) = −i (g/2) n t`.
pub fn coherent_amplitude(g: f64, n: u32, t: f64) -> DisplacementReport {
    DisplacementReport::from_beta(Complex64::new(0.0, -0.5 * g * n as f64 * t), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// Steady state of the mean-amplitude equation; `delta_s = g n/(√2 γ)`.
    pub report: DisplacementReport,
    /// The alternative figure `(g n/γ)²`, four times `report.phonons`.
    pub phonons_alt: f64,
}

pub fn steady_state(g: f64, n: u32, gamma: f64) -> Result<SteadyState> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    let beta = Complex64::new(0.0, -g * n as f64 / (2.0 * gamma));
    let alt = g * n as f64 / gamma;
    Ok(SteadyState {
        report: DisplacementReport::from_beta(beta, f64::INFINITY),
        phonons_alt: alt * alt,
    })
}

/// Solution of `dβ/dt = −γβ − i(g/2)n` from `β(0) = 0`:
/// `β(t) = −i (g n / 2γ)(1 − e^{−γt})`. `γ = 0` gives the undamped drive.
pub fn damped_mean_evolution(g: f64, n: u32, gamma: f64, t: f64) -> Result<DisplacementReport> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be non-negative, got {gamma}")));
    }
    if t.is_infinite() && t > 0.0 {
        return Ok(steady_state(g, n, gamma)?.report);
    }
    // (1 − e^{−γt})/γ without cancellation; → t as γ → 0
    let growth = if gamma == 0.0 { t } else { -(-gamma * t).exp_m1() / gamma };
    let beta = Complex64::new(0.0, -0.5 * g * n as f64 * growth);
    Ok(DisplacementReport::from_beta(beta, t))
}
