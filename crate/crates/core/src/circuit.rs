//! SI parameter maps for the capacitively coupled LC circuit and its
//! flux-tunable Josephson-junction variant.
//!
//! Everything here is in SI units (rad/s, H, F, m, kg, s). The dynamics
//! modules are dimensionless; this is where the two meet.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::coherent_amplitude;

/// Magnetic flux quantum φ0 (Wb).
pub const FLUX_QUANTUM: f64 = 2.067833848e-15;
/// Reduced Planck constant ℏ (J·s).
pub const HBAR: f64 = 1.054571817e-34;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    /// Junction critical current I0.
    pub critical_current_a: f64,
    /// Capacitance at zero displacement.
    pub capacitance_f: f64,
    /// Capacitor plate gap d.
    pub gap_m: f64,
    pub mass_kg: f64,
    pub omega_m_rad_per_s: f64,
    pub quality_factor: f64,
    /// Fixed inductance for the junction-free circuit.
    #[serde(default)]
    pub inductance_h: Option<f64>,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        positive("critical_current_a", self.critical_current_a)?;
        positive("capacitance_f", self.capacitance_f)?;
        positive("gap_m", self.gap_m)?;
        positive("mass_kg", self.mass_kg)?;
        positive("omega_m_rad_per_s", self.omega_m_rad_per_s)?;
        positive("quality_factor", self.quality_factor)?;
        if let Some(l) = self.inductance_h {
            positive("inductance_h", l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCircuit {
    /// `√(4π I0 / (φ0 C))`.
    pub omega_max: f64,
    /// `√(ℏ / (2 m Ω))`.
    pub x_zp: f64,
    /// `ω_max x_zp / (2d)`.
    pub g_max: f64,
    /// `φ0 / (4π I0)`.
    pub l_j: f64,
}

pub fn derive(cp: &CircuitParams) -> Result<DerivedCircuit> {
    cp.validate()?;
    let omega_max = (4.0 * PI * cp.critical_current_a / (FLUX_QUANTUM * cp.capacitance_f)).sqrt();
    let x_zp = zero_point_motion(cp.mass_kg, cp.omega_m_rad_per_s)?;
    Ok(DerivedCircuit {
        omega_max,
        x_zp,
        g_max: omega_max * x_zp / (2.0 * cp.gap_m),
        l_j: FLUX_QUANTUM / (4.0 * PI * cp.critical_current_a),
    })
}

pub fn zero_point_motion(mass_kg: f64, omega_m: f64) -> Result<f64> {
    positive("mass_kg", mass_kg)?;
    positive("omega_m_rad_per_s", omega_m)?;
    Ok((HBAR / (2.0 * mass_kg * omega_m)).sqrt())
}

/// `2π f`.
pub fn angular_frequency(hz: f64) -> f64 {
    2.0 * PI * hz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcRates {
    pub omega: f64,
    pub g: f64,
}

/// Fixed-inductance circuit: `ω = 1/√(LC)`, `g = ω x_zp / (2d)`.
pub fn lc_basic(inductance_h: f64, capacitance_f: f64, gap_m: f64, mass_kg: f64, omega_m: f64) -> Result<LcRates> {
    positive("inductance_h", inductance_h)?;
    positive("capacitance_f", capacitance_f)?;
    positive("gap_m", gap_m)?;
    let omega = 1.0 / (inductance_h * capacitance_f).sqrt();
    let x_zp = zero_point_motion(mass_kg, omega_m)?;
    Ok(LcRates {
        omega,
        g: omega * x_zp / (2.0 * gap_m),
    })
}

/// Gap that gives coupling `g` for a fixed-inductance circuit.
pub fn gap_for_coupling(g: f64, inductance_h: f64, capacitance_f: f64, mass_kg: f64, omega_m: f64) -> Result<f64> {
    positive("g", g)?;
    let r = lc_basic(inductance_h, capacitance_f, 1.0, mass_kg, omega_m)?;
    Ok(r.g / g)
}

/// `cos(πφ)` after reducing φ into `[−1, 1]`, computed without
/// cancellation near the branch edge `|φ| = 1/2`.
fn branch_cos(phi: f64) -> Result<(f64, f64)> {
    if !phi.is_finite() {
        return Err(Error::param("phi", "must be finite"));
    }
    let r = phi - 2.0 * (phi / 2.0).round();
    let a = r.abs();
    let c = if a <= 0.25 { (PI * a).cos() } else { (PI * (0.5 - a)).sin() };
    Ok((r, c))
}

fn closed_branch(phi: f64) -> Result<f64> {
    let (_, c) = branch_cos(phi)?;
    if c < 0.0 {
        return Err(Error::OutOfBranch { phi, cos: c });
    }
    Ok(c)
}

/// `L_s(φ) = φ0 / (4π I0 cos(πφ))`, φ in units of φ0.
pub fn junction_inductance(phi: f64, critical_current_a: f64) -> Result<f64> {
    positive("critical_current_a", critical_current_a)?;
    let (_, c) = branch_cos(phi)?;
    if c <= 0.0 {
        return Err(Error::OutOfBranch { phi, cos: c });
    }
    Ok(FLUX_QUANTUM / (4.0 * PI * critical_current_a * c))
}

/// `ω(φ) = ω_max √cos(πφ)`.
pub fn flux_frequency(phi: f64, cp: &CircuitParams) -> Result<f64> {
    let d = derive(cp)?;
    Ok(d.omega_max * closed_branch(phi)?.sqrt())
}

/// `g(φ) = g_max √cos(πφ)`.
pub fn flux_coupling(phi: f64, cp: &CircuitParams) -> Result<f64> {
    let d = derive(cp)?;
    Ok(d.g_max * closed_branch(phi)?.sqrt())
}

/// Flux that makes `√cos(πφ) = [1 + cos νt]/2`, so `g = (g_max/2)[1 + cos νt]`.
pub fn flux_waveform(nu: f64, t: f64) -> f64 {
    flux_waveform_with_depth(nu, t, 0.5)
}

/// Flux for `√cos(πφ) = (1 − η) + η cos νt` with `0 ≤ η ≤ 1/2`.
///
/// Near φ = 1/2 the bracket `b` is only as accurate as the spacing of
/// f64 values around 1/2 allows: recovering it from φ carries an absolute
/// error of roughly `2e−16 / b`.
pub fn flux_waveform_with_depth(nu: f64, t: f64, eta: f64) -> f64 {
    let b = (1.0 - eta) + eta * (nu * t).cos();
    // arccos(b²)/π written as 1/2 − arcsin(b²)/π
    0.5 - (b * b).min(1.0).asin() / PI
}

/// `|dφ/dt|` of [`flux_waveform_with_depth`], in closed form. The
/// apparent 0/0 at `νt = 0` cancels analytically; the limit is `√(2η) ν / π`.
pub fn flux_rate(nu: f64, t: f64, eta: f64) -> f64 {
    if eta == 0.0 || nu == 0.0 {
        return 0.0;
    }
    let b = (1.0 - eta) + eta * (nu * t).cos();
    let c = (0.5 * nu * t).cos();
    4.0 * b.abs() * eta * nu.abs() * c.abs() / (PI * (2.0 * eta * (1.0 + b) * (1.0 + b * b)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiabaticityOptions {
    /// `ok` requires `ν/ω_min` below this.
    pub threshold: f64,
    /// Floor on ω, as a fraction of ω_max, used for the reported ratios.
    pub floor_fraction: f64,
    /// Waveform depth η; 1/2 is the full-swing waveform.
    pub depth: f64,
    /// Samples per modulation period.
    pub samples: usize,
}

impl Default for AdiabaticityOptions {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            floor_fraction: 1e-3,
            depth: 0.5,
            samples: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticityReport {
    /// `ν / ω_max`.
    pub ratio_nu_omega_max: f64,
    /// Smallest ω over the waveform.
    pub omega_min: f64,
    /// `max(ω_min, floor_fraction · ω_max)`, the ω used for the ratios below.
    pub omega_min_floored: f64,
    pub floor_applied: bool,
    /// `ν / omega_min_floored`.
    pub ratio_nu_omega: f64,
    pub max_dphi_dt: f64,
    /// `max|dφ/dt| · 2π / omega_min_floored`.
    pub dphi_per_lc_period: f64,
    /// `ν / ω_min < threshold`; a waveform that drives ω to zero never passes.
    pub ok: bool,
}

/// How slowly the flux modulation moves compared with the LC frequency.
pub fn adiabaticity_report(nu: f64, cp: &CircuitParams, opts: &AdiabaticityOptions) -> Result<AdiabaticityReport> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::param("nu", format!("must be finite and non-negative, got {nu}")));
    }
    if !(0.0..=0.5).contains(&opts.depth) {
        return Err(Error::param("depth", format!("must lie in [0, 1/2], got {}", opts.depth)));
    }
    if !(opts.floor_fraction > 0.0 && opts.floor_fraction <= 1.0) {
        return Err(Error::param("floor_fraction", "must lie in (0, 1]"));
    }
    if opts.samples < 2 {
        return Err(Error::param("samples", "need at least 2"));
    }
    let d = derive(cp)?;
    let (omega_min, max_rate) = if nu == 0.0 {
        (d.omega_max, 0.0)
    } else {
        let period = 2.0 * PI / nu;
        let mut wmin = f64::INFINITY;
        let mut rmax = 0.0_f64;
        for k in 0..=opts.samples {
            let t = period * k as f64 / opts.samples as f64;
            let phi = flux_waveform_with_depth(nu, t, opts.depth);
            wmin = wmin.min(d.omega_max * closed_branch(phi)?.sqrt());
            rmax = rmax.max(flux_rate(nu, t, opts.depth));
        }
        // the deepest point νt = π lies on the grid only for even sample counts
        let deepest = d.omega_max * (1.0 - 2.0 * opts.depth).max(0.0);
        (wmin.min(deepest), rmax)
    };
    let floor = opts.floor_fraction * d.omega_max;
    let floored = omega_min.max(floor);
    Ok(AdiabaticityReport {
        ratio_nu_omega_max: nu / d.omega_max,
        omega_min,
        omega_min_floored: floored,
        floor_applied: omega_min < floor,
        ratio_nu_omega: nu / floored,
        max_dphi_dt: max_rate,
        dphi_per_lc_period: max_rate * 2.0 * PI / floored,
        ok: omega_min > 0.0 && nu / omega_min < opts.threshold,
    })
}

/// Enhancement figure quoted alongside the example rates.
pub const QUOTED_ENHANCEMENT: f64 = 500.0;
/// Steady-state phonon figure quoted for Q = 1e5.
pub const QUOTED_STEADY_PHONONS: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancementInputs {
    /// Coupling used for the Kerr estimate.
    pub kerr_g_rad_per_s: f64,
    pub omega_m_rad_per_s: f64,
    pub eta: f64,
    /// Coupling used for the displacement estimates.
    pub drive_g_rad_per_s: f64,
    pub photons: u32,
    pub quality_factor: f64,
}

impl EnhancementInputs {
    /// The worked example: 10 MHz mechanics, `g = 2π×100 Hz`, `η = 0.2`
    /// for the Kerr rate; `g = 5780 s⁻¹`, `n = 10`, `Q = 1e5` for displacement.
    pub fn example() -> Self {
        Self {
            kerr_g_rad_per_s: angular_frequency(100.0),
            omega_m_rad_per_s: angular_frequency(1e7),
            eta: 0.2,
            drive_g_rad_per_s: 5780.0,
            photons: 10,
            quality_factor: 1e5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingConvention {
    /// `γ = Ω/Q`.
    OmegaOverQ,
    /// `γ = Ω/(2Q)`.
    OmegaOverTwoQ,
}

impl DampingConvention {
    pub fn gamma(self, omega_m: f64, q: f64) -> f64 {
        match self {
            DampingConvention::OmegaOverQ => omega_m / q,
            DampingConvention::OmegaOverTwoQ => omega_m / (2.0 * q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyDisplacement {
    pub convention: DampingConvention,
    pub gamma: f64,
    /// `g n / (√2 γ)`.
    pub delta_s: f64,
    /// `|β|² = (g n / 2γ)²` from the mean-amplitude equation.
    pub phonons: f64,
    /// `(g n / γ)²`.
    pub phonons_alt: f64,
    /// `g n / γ`, the unsquared amplitude.
    pub amplitude_alt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    /// `η g / 4`.
    pub chi_modulated: f64,
    /// `g² / Ω`.
    pub chi_static: f64,
    /// `chi_modulated / chi_static = η Ω / (4 g)`.
    pub enhancement_ratio: f64,
    pub quoted_enhancement_ratio: f64,
    /// Computed and quoted ratios differ by more than 1%.
    pub enhancement_discrepancy: bool,
    /// `t = 1/g` for the drive coupling.
    pub drive_time: f64,
    /// `|β|² = (g n t / 2)²` at `t = 1/g`.
    pub phonons_at_drive_time: f64,
    /// Momentum growth rate `√2 (η g / 2) n`.
    pub momentum_rate: f64,
    pub steady: [SteadyDisplacement; 2],
    pub quoted_steady_phonons: f64,
    /// No steady-state phonon figure under either convention is within 10% of the quoted one.
    pub steady_discrepancy: bool,
}

pub fn enhancement_estimates(inp: &EnhancementInputs) -> Result<EnhancementReport> {
    positive("kerr_g_rad_per_s", inp.kerr_g_rad_per_s)?;
    positive("omega_m_rad_per_s", inp.omega_m_rad_per_s)?;
    positive("drive_g_rad_per_s", inp.drive_g_rad_per_s)?;
    positive("quality_factor", inp.quality_factor)?;
    if !(0.0..=1.0).contains(&inp.eta) {
        return Err(Error::param("eta", format!("must lie in [0, 1], got {}", inp.eta)));
    }
    let g = inp.kerr_g_rad_per_s;
    let w = inp.omega_m_rad_per_s;
    let chi_modulated = inp.eta * g / 4.0;
    let chi_static = g * g / w;
    let enhancement_ratio = chi_modulated / chi_static;

    let gd = inp.drive_g_rad_per_s;
    let n = inp.photons as f64;
    let drive_time = 1.0 / gd;
    let phonons_at_drive_time = coherent_amplitude(gd, inp.photons, drive_time).phonons;

    let steady = [DampingConvention::OmegaOverQ, DampingConvention::OmegaOverTwoQ].map(|convention| {
        let gamma = convention.gamma(w, inp.quality_factor);
        let amp = gd * n / gamma;
        SteadyDisplacement {
            convention,
            gamma,
            delta_s: amp / SQRT_2,
            phonons: 0.25 * amp * amp,
            phonons_alt: amp * amp,
            amplitude_alt: amp,
        }
    });
    let near = |x: f64| (x / QUOTED_STEADY_PHONONS - 1.0).abs() <= 0.1;
    let steady_discrepancy = !steady.iter().any(|s| near(s.phonons) || near(s.phonons_alt));

    Ok(EnhancementReport {
        chi_modulated,
        chi_static,
        enhancement_ratio,
        quoted_enhancement_ratio: QUOTED_ENHANCEMENT,
        enhancement_discrepancy: (enhancement_ratio / QUOTED_ENHANCEMENT - 1.0).abs() > 0.01,
        drive_time,
        phonons_at_drive_time,
        momentum_rate: SQRT_2 * 0.5 * inp.eta * gd * n,
        steady,
        quoted_steady_phonons: QUOTED_STEADY_PHONONS,
        steady_discrepancy,
    })
}
