//! Closed-form and numerical propagation of
//! `H = ω a†a + Ω b†b + g a†a (b + b†)` (ℏ = 1, dimensionless rates).
//!
//! The Hamiltonian commutes with `a†a`, so every propagator is block
//! diagonal in the LC photon number `n`. Block `n` is a linearly driven
//! mechanical oscillator `ωn + Ω b†b + g n (b + b†)`.

mod numeric;

pub use numeric::{
    numeric_propagator, propagate_interval, propagate_state, propagate_tracked, Integrator, PiecewiseSchedule,
    Schedule, StepControl, Tracked,
};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{embed, number, quadratures, FockSpace, Mode, Operator, Space, StateVector};
use crate::linalg::{expm_hermitian, CMatrix, RMatrix, Tridiagonal};

/// Physical rates of the coupled pair, all in the same (inverse-time) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// LC frequency ω.
    pub omega_lc: f64,
    /// Mechanical frequency Ω.
    pub omega_m: f64,
    /// Coupling rate g.
    pub g: f64,
    /// Mechanical amplitude damping rate γ.
    pub gamma: f64,
}

impl SystemParams {
    pub fn new(omega_lc: f64, omega_m: f64, g: f64) -> Self {
        Self {
            omega_lc,
            omega_m,
            g,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_lc", self.omega_lc),
            ("omega_m", self.omega_m),
            ("g", self.g),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.gamma < 0.0 {
            return Err(Error::param("gamma", "must be non-negative"));
        }
        Ok(())
    }

    fn require_mech_freq(&self) -> Result<()> {
        self.validate()?;
        if self.omega_m <= 0.0 {
            return Err(Error::param("omega_m", format!("must be positive, got {}", self.omega_m)));
        }
        Ok(())
    }

    /// `a·self + b·other`; the block Hamiltonian is linear in the rates.
    pub(crate) fn combine(&self, a: f64, other: &SystemParams, b: f64) -> SystemParams {
        SystemParams {
            omega_lc: a * self.omega_lc + b * other.omega_lc,
            omega_m: a * self.omega_m + b * other.omega_m,
            g: a * self.g + b * other.g,
            gamma: a * self.gamma + b * other.gamma,
        }
    }
}

/// Real symmetric mechanical block of the Hamiltonian for LC photon number `n`.
pub fn hamiltonian_block(params: &SystemParams, n: usize, dim_b: usize) -> RMatrix {
    let nf = n as f64;
    let mut h = RMatrix::zeros(dim_b, dim_b);
    for k in 0..dim_b {
        h[(k, k)] = params.omega_lc * nf + params.omega_m * k as f64;
        if k + 1 < dim_b {
            let off = params.g * nf * ((k + 1) as f64).sqrt();
            h[(k, k + 1)] = off;
            h[(k + 1, k)] = off;
        }
    }
    h
}

/// [`hamiltonian_block`] in tridiagonal storage.
pub fn hamiltonian_tridiagonal(params: &SystemParams, n: usize, dim_b: usize) -> Tridiagonal {
    let nf = n as f64;
    Tridiagonal {
        diag: (0..dim_b).map(|k| params.omega_lc * nf + params.omega_m * k as f64).collect(),
        off: (1..dim_b).map(|k| params.g * nf * (k as f64).sqrt()).collect(),
    }
}

/// Joint Hamiltonian assembled from embedded single-mode operators.
pub fn hamiltonian(params: &SystemParams, space: FockSpace) -> Result<Operator> {
    params.validate()?;
    let na = embed(&number(space.dim_a)?, Mode::A, space)?;
    let nb = embed(&number(space.dim_b)?, Mode::B, space)?;
    let mut h = &na.scale(params.omega_lc) + &nb.scale(params.omega_m);
    if space.dim_b >= 2 {
        let (x, _) = quadratures(space.dim_b)?;
        // b + b† = √2 x
        let xb = embed(&x.scale(std::f64::consts::SQRT_2), Mode::B, space)?;
        h = &h + &(&na * &xb).scale(params.g);
    }
    Ok(h)
}

/// Assemble a joint operator from per-photon-number mechanical blocks.
pub(crate) fn from_blocks(space: FockSpace, blocks: &[CMatrix]) -> Operator {
    let d = space.dim();
    let db = space.dim_b;
    let mut m = CMatrix::zeros(d, d);
    for (n, blk) in blocks.iter().enumerate() {
        m.view_mut((n * db, n * db), (db, db)).copy_from(blk);
    }
    Operator {
        space: Space::Joint(space),
        matrix: m,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorFactors {
    pub lambda_x: f64,
    pub lambda_p: f64,
    pub mu: f64,
    pub t: f64,
}

/// `λ_x = (g/Ω) sin Ωt`, `λ_p = (g/Ω)(1 − cos Ωt)`, `μ = (g²/Ω)(t − sin(Ωt)/Ω)`.
pub fn propagator_factors(params: &SystemParams, t: f64) -> Result<PropagatorFactors> {
    params.require_mech_freq()?;
    let (g, w) = (params.g, params.omega_m);
    let (s, c) = (w * t).sin_cos();
    Ok(PropagatorFactors {
        lambda_x: g / w * s,
        lambda_p: g / w * (1.0 - c),
        mu: g * g / w * (t - s / w),
        t,
    })
}

/// The four factors of the closed-form propagator, in application order
/// from left to right:
/// `exp(−iω a†a t)`, `exp(iμ (a†a)²)`, `exp(−i a†a √2(λ_x x − λ_p p))`,
/// `exp(−iΩ b†b t)`.
pub fn analytic_factors(params: &SystemParams, t: f64, space: FockSpace) -> Result<[Operator; 4]> {
    let f = propagator_factors(params, t)?;
    let d = space.dim();
    let diag = |phase: &dyn Fn(usize, usize) -> f64| {
        let mut m = CMatrix::zeros(d, d);
        for i in 0..d {
            let (na, nb) = space.levels(i);
            m[(i, i)] = Complex64::from_polar(1.0, phase(na, nb));
        }
        Operator {
            space: Space::Joint(space),
            matrix: m,
        }
    };
    let free_lc = diag(&|na, _| -params.omega_lc * na as f64 * t);
    let kerr = diag(&|na, _| f.mu * (na * na) as f64);
    let free_m = diag(&|_, nb| -params.omega_m * nb as f64 * t);
    let blocks: Vec<CMatrix> = (0..space.dim_a).map(|n| conditional_displacement(&f, n, space.dim_b)).collect::<Result<_>>()?;
    let disp = from_blocks(space, &blocks);
    Ok([free_lc, kerr, disp, free_m])
}

/// `exp(−i n √2(λ_x x − λ_p p))` on the truncated mechanics.
///
/// On the untruncated space this is the displacement `D(β)` with
/// `β = −n(λ_p + iλ_x)`, which is what the direct block exponential gives.
fn conditional_displacement(f: &PropagatorFactors, n: usize, dim_b: usize) -> Result<CMatrix> {
    if n == 0 || dim_b < 2 {
        return Ok(CMatrix::identity(dim_b, dim_b));
    }
    let (x, p) = quadratures(dim_b)?;
    let gen = (x.matrix * Complex64::from(f.lambda_x) - p.matrix * Complex64::from(f.lambda_p))
        * Complex64::from(std::f64::consts::SQRT_2 * n as f64);
    Ok(expm_hermitian(&gen, 1.0))
}

/// Closed-form `U(t)`, assembled block by block; equal to the product of
/// [`analytic_factors`].
pub fn analytic_propagator(params: &SystemParams, t: f64, space: FockSpace) -> Result<Operator> {
    let f = propagator_factors(params, t)?;
    let db = space.dim_b;
    let rot: Vec<Complex64> = (0..db).map(|k| Complex64::from_polar(1.0, -params.omega_m * k as f64 * t)).collect();
    let mut blocks = Vec::with_capacity(space.dim_a);
    for n in 0..space.dim_a {
        let nf = n as f64;
        let phase = Complex64::from_polar(1.0, -params.omega_lc * nf * t + f.mu * nf * nf);
        let mut blk = conditional_displacement(&f, n, db)?;
        for (k, mut col) in blk.column_iter_mut().enumerate() {
            col *= phase * rot[k];
        }
        blocks.push(blk);
    }
    Ok(from_blocks(space, &blocks))
}

/// `exp[−i(ω a†a + Ω b†b − (g²/Ω)(a†a)²)τ]` at `τ = 2πm/Ω`.
pub fn kerr_propagator(params: &SystemParams, m: u32, space: FockSpace) -> Result<Operator> {
    params.require_mech_freq()?;
    if m == 0 {
        return Err(Error::param("m", "number of mechanical periods must be positive"));
    }
    let tau = 2.0 * PI * m as f64 / params.omega_m;
    let chi = params.g * params.g / params.omega_m;
    let d = space.dim();
    let mut u = CMatrix::zeros(d, d);
    for i in 0..d {
        let (na, nb) = space.levels(i);
        let (na, nb) = (na as f64, nb as f64);
        let energy = params.omega_lc * na + params.omega_m * nb - chi * na * na;
        u[(i, i)] = Complex64::from_polar(1.0, -energy * tau);
    }
    Ok(Operator {
        space: Space::Joint(space),
        matrix: u,
    })
}

/// Static Kerr rate `χ = g²/Ω`.
pub fn kerr_rate(g: f64, omega_m: f64) -> Result<f64> {
    if !(omega_m > 0.0) {
        return Err(Error::param("omega_m", format!("must be positive, got {omega_m}")));
    }
    Ok(g * g / omega_m)
}

/// Photon-induced phase-space distance at `t = π/Ω`: `√8 (g/Ω) n`.
pub fn displacement_at_half_period(g: f64, omega_m: f64, n: u32) -> Result<f64> {
    if !(omega_m > 0.0) {
        return Err(Error::param("omega_m", format!("must be positive, got {omega_m}")));
    }
    Ok(8f64.sqrt() * g / omega_m * n as f64)
}

/// `(⟨x⟩, ⟨p⟩)` of the mechanics in a joint state.
pub fn mechanical_quadratures(psi: &StateVector) -> Result<(f64, f64)> {
    let space = psi
        .joint_space()
        .ok_or_else(|| Error::param("psi", "expected a joint state"))?;
    let db = space.dim_b;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // ⟨b⟩ summed over photon-number blocks
    let mut b = Complex64::new(0.0, 0.0);
    for na in 0..space.dim_a {
        for k in 1..db {
            b += psi.amplitude(space.index(na, k - 1)).conj() * psi.amplitude(space.index(na, k)) * (k as f64).sqrt();
        }
    }
    Ok((2.0 * s * b.re, 2.0 * s * b.im))
}

/// Photon-number populations `P(n_a)` of a joint state.
pub fn photon_populations(psi: &StateVector) -> Result<Vec<f64>> {
    let space = psi
        .joint_space()
        .ok_or_else(|| Error::param("psi", "expected a joint state"))?;
    Ok((0..space.dim_a)
        .map(|na| (0..space.dim_b).map(|nb| psi.amplitude(space.index(na, nb)).norm_sqr()).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fidelity, TailGuard};
    use crate::linalg::max_abs_diff;
    use proptest::prelude::*;

    fn space(a: usize, b: usize) -> FockSpace {
        FockSpace::new(a, b).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let s = space(3, 5);
        let p = SystemParams::new(1.3, 0.7, 0.0);
        let h = hamiltonian(&p, s).unwrap();
        for i in 0..s.dim() {
            let (na, nb) = s.levels(i);
            for j in 0..s.dim() {
                let want = if i == j { 1.3 * na as f64 + 0.7 * nb as f64 } else { 0.0 };
                assert!((h.entry(i, j).re - want).abs() < 1e-14 && h.entry(i, j).im == 0.0);
            }
        }

        let p = SystemParams::new(1.3, 0.7, 0.25);
        let h = hamiltonian(&p, s).unwrap();
        assert!((h.entry(s.index(1, 1), s.index(1, 0)).re - 0.25).abs() < 1e-15);
        assert!(h.is_hermitian());
        let na = embed(&number(3).unwrap(), Mode::A, s).unwrap();
        assert!(h.commutator(&na).unwrap().max_abs() < 1e-12);

        let blocks: Vec<CMatrix> = (0..3).map(|n| hamiltonian_block(&p, n, 5).map(Complex64::from)).collect();
        assert!(max_abs_diff(&from_blocks(s, &blocks).matrix, &h.matrix) < 1e-14);
    }

    #[test]
    fn factor_examples() {
        let p = SystemParams::new(0.0, 10.0, 1.0);
        let f0 = propagator_factors(&p, 0.0).unwrap();
        assert_eq!((f0.lambda_x, f0.lambda_p, f0.mu), (0.0, 0.0, 0.0));

        let f = propagator_factors(&p, PI / 10.0).unwrap();
        assert!(f.lambda_x.abs() < 1e-15);
        assert!((f.lambda_p - 2.0 * 1.0 / 10.0).abs() < 1e-15);

        let f = propagator_factors(&p, 2.0 * PI / 10.0).unwrap();
        assert!((f.mu - 0.0628319).abs() < 1e-7);
        assert!(f.lambda_x.abs() < 1e-15 && f.lambda_p.abs() < 1e-15);

        assert!(propagator_factors(&SystemParams::new(0.0, 0.0, 1.0), 1.0).is_err());
        assert!(propagator_factors(&SystemParams::new(0.0, -1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn decoupled_limit_is_free_rotation() {
        let s = space(3, 8);
        let p = SystemParams::new(0.9, 2.1, 0.0);
        let t = 1.7;
        let u = analytic_propagator(&p, t, s).unwrap();
        for i in 0..s.dim() {
            let (na, nb) = s.levels(i);
            let want = Complex64::from_polar(1.0, -(0.9 * na as f64 + 2.1 * nb as f64) * t);
            assert!((u.entry(i, i) - want).norm() < 1e-14);
        }
        assert!(u.unitarity_defect() < 1e-13);
    }

    #[test]
    fn factor_product_matches_block_assembly() {
        let s = space(3, 12);
        let p = SystemParams::new(0.4, 1.0, 0.15);
        let [f1, f2, f3, f4] = analytic_factors(&p, 2.3, s).unwrap();
        let prod = &(&(&f1 * &f2) * &f3) * &f4;
        let u = analytic_propagator(&p, 2.3, s).unwrap();
        assert!(max_abs_diff(&prod.matrix, &u.matrix) < 1e-13);
    }

    #[test]
    fn kerr_propagator_examples() {
        let s = space(3, 20);
        let free = SystemParams::new(0.6, 1.5, 0.0);
        let k = kerr_propagator(&free, 1, s).unwrap();
        let tau = 2.0 * PI / 1.5;
        let f = analytic_propagator(&free, tau, s).unwrap();
        assert!(max_abs_diff(&k.matrix, &f.matrix) < 1e-12);

        let p = SystemParams::new(0.0, 1.5, 0.2);
        let k = kerr_propagator(&p, 1, s).unwrap();
        let rel = k.entry(s.index(2, 0), s.index(2, 0)) / k.entry(0, 0);
        let chi = 0.2 * 0.2 / 1.5;
        assert!((rel - Complex64::from_polar(1.0, chi * 4.0 * tau)).norm() < 1e-12);

        let u = analytic_propagator(&p, tau, s).unwrap();
        assert!(max_abs_diff(&k.matrix, &u.matrix) < 1e-10);
        assert!(kerr_propagator(&p, 0, s).is_err());
    }

    #[test]
    fn kerr_rate_and_displacement() {
        assert!((kerr_rate(1.0, 100.0).unwrap() - 0.01).abs() < 1e-16);
        assert_eq!(kerr_rate(0.0, 3.0).unwrap(), 0.0);
        let chi = kerr_rate(2.0 * PI * 100.0, 2.0 * PI * 1e7).unwrap();
        assert!((chi / (2.0 * PI * 1e-3) - 1.0).abs() < 1e-12);
        assert!(kerr_rate(1.0, 0.0).is_err());

        assert_eq!(displacement_at_half_period(1.0, 2.0, 0).unwrap(), 0.0);
        assert!((displacement_at_half_period(0.1, 1.0, 1).unwrap() - 0.28284).abs() < 1e-5);
        assert!(displacement_at_half_period(0.1, -1.0, 1).is_err());
    }

    #[test]
    fn half_period_displacement_from_full_state() {
        // full-state oracle: evolve |n⟩⊗|0⟩ and read off √(⟨x⟩²+⟨p⟩²)
        let s = space(4, 40);
        let p = SystemParams::new(0.3, 1.0, 0.1);
        let u = analytic_propagator(&p, PI, s).unwrap();
        for n in 0..4u32 {
            let psi0 = StateVector::basis(s, n as usize, 0).unwrap();
            let psi = u.evolve(&psi0, &TailGuard::default()).unwrap();
            let (x, pm) = mechanical_quadratures(&psi).unwrap();
            let ds = x.hypot(pm);
            assert!((ds - displacement_at_half_period(0.1, 1.0, n).unwrap()).abs() < 1e-8, "n={n}: {ds}");
        }
    }

    #[test]
    fn periodic_disentanglement() {
        let s = space(3, 30);
        let p = SystemParams::new(0.2, 1.0, 0.3);
        let lc = StateVector::uniform_superposition(3, 3).unwrap();
        let psi0 = StateVector::product(&lc, &StateVector::fock(30, 0).unwrap()).unwrap();
        for m in 1..=3 {
            let u = analytic_propagator(&p, 2.0 * PI * m as f64, s).unwrap();
            let psi = u.evolve(&psi0, &TailGuard::default()).unwrap();
            assert!(psi.entanglement_entropy().unwrap() < 1e-8);
        }
        // mid-period the modes are entangled
        let u = analytic_propagator(&p, PI, s).unwrap();
        assert!(u.evolve(&psi0, &TailGuard::default()).unwrap().entanglement_entropy().unwrap() > 1e-3);
    }

    #[test]
    fn photon_number_is_conserved() {
        let s = space(3, 30);
        let p = SystemParams::new(0.2, 1.0, 0.3);
        let lc = StateVector::from_amplitudes(
            Space::Mode(3),
            crate::linalg::CVector::from_vec(vec![Complex64::new(0.5, 0.1), Complex64::new(0.2, -0.7), Complex64::new(0.4, 0.0)]),
        )
        .unwrap();
        let psi0 = StateVector::product(&lc, &StateVector::fock(30, 0).unwrap()).unwrap();
        let before = photon_populations(&psi0).unwrap();
        let psi = analytic_propagator(&p, 2.1, s).unwrap().evolve(&psi0, &TailGuard::default()).unwrap();
        for (a, b) in before.iter().zip(photon_populations(&psi).unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(fidelity(&psi, &psi).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn mu_is_nondecreasing(g in 0.0f64..2.0, w in 0.1f64..5.0, t in 0.0f64..20.0, dt in 0.0f64..1.0) {
            let p = SystemParams::new(0.0, w, g);
            let a = propagator_factors(&p, t).unwrap().mu;
            let b = propagator_factors(&p, t + dt).unwrap().mu;
            prop_assert!(b >= a - 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn lambdas_vanish_at_full_periods(g in 0.0f64..2.0, w in 0.1f64..5.0, m in 1u32..6) {
            let p = SystemParams::new(0.0, w, g);
            let t = 2.0 * PI * m as f64 / w;
            let f = propagator_factors(&p, t).unwrap();
            prop_assert!(f.lambda_x.abs() < 1e-12 * (1.0 + g / w) * m as f64);
            prop_assert!(f.lambda_p.abs() < 1e-12 * (1.0 + g / w) * m as f64);
            prop_assert!((f.mu - g * g / w * t).abs() < 1e-10 * (1.0 + f.mu));
        }

        #[test]
        fn analytic_propagator_is_unitary(g in 0.0f64..0.3, w in 0.5f64..2.0, t in 0.0f64..10.0) {
            let u = analytic_propagator(&SystemParams::new(0.7, w, g), t, space(3, 16)).unwrap();
            prop_assert!(u.unitarity_defect() < 1e-10);
        }
    }
}
