//! Piecewise-constant optimal control of `g(t)` and `Ω(t)` toward the Kerr
//! unitary `V = exp[iπ(a†a)²/2]`.
//!
//! The interval `[0, τ]` is split into `N` equal segments with constant
//! `(g_k, Ω_k)`. Each segment propagator is exact (one spectral
//! decomposition per photon-number block), and the gradient is the exact
//! derivative of that product. ω is a fixed parameter of the problem,
//! zero by default, applied to the dynamics only; V's phases are
//! defined up to the free LC rotation.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{hamiltonian_block, SystemParams};
use crate::error::{Error, Result};
use crate::hilbert::{FockSpace, Space, StateVector, TailGuard, DEFAULT_TAIL_TOL};
use crate::linalg::{CMatrix, CVector, RMatrix, RealSpectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub tau: f64,
    pub g_max: f64,
    pub g_values: Vec<f64>,
    pub omega_values: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(tau: f64, g_max: f64, g_values: Vec<f64>, omega_values: Vec<f64>) -> Result<Self> {
        let s = Self {
            tau,
            g_max,
            g_values,
            omega_values,
        };
        s.validate()?;
        Ok(s)
    }

    /// `N` segments, every one at `(g, Ω)`.
    pub fn constant(segments: usize, tau: f64, g_max: f64, g: f64, omega_m: f64) -> Result<Self> {
        Self::new(tau, g_max, vec![g; segments], vec![omega_m; segments])
    }

    pub fn segments(&self) -> usize {
        self.g_values.len()
    }

    pub fn segment_duration(&self) -> f64 {
        self.tau / self.segments() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.g_values.is_empty() {
            return Err(Error::param("segments", "need at least one segment"));
        }
        if self.omega_values.len() != self.g_values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.g_values.len(),
                found: self.omega_values.len(),
            });
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", format!("must be finite and non-negative, got {}", self.tau)));
        }
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::param("g_max", format!("must be positive, got {}", self.g_max)));
        }
        // allow a few ulps of slack from the bounded reparametrisation
        let slack = 1e-12 * self.g_max;
        if let Some(g) = self.g_values.iter().find(|g| !(**g >= -slack && **g <= self.g_max + slack)) {
            return Err(Error::param("g_values", format!("{g} is outside [0, {}]", self.g_max)));
        }
        if let Some(w) = self.omega_values.iter().find(|w| !w.is_finite()) {
            return Err(Error::param("omega_values", format!("{w} is not finite")));
        }
        Ok(())
    }
}

/// `(V ⊗ I)(ψ_a ⊗ |0⟩)`, phase `exp(iπn²/2)` on `|n⟩`.
pub fn target_state(psi0_lc: &StateVector, space: FockSpace) -> Result<StateVector> {
    kerr_target(psi0_lc, space, 1.0)
}

/// Target for `V^s = exp[isπ(a†a)²/2]`.
pub fn kerr_target(psi0_lc: &StateVector, space: FockSpace, strength: f64) -> Result<StateVector> {
    let Space::Mode(da) = psi0_lc.space() else {
        return Err(Error::param("psi0_lc", "expected a single-mode LC state"));
    };
    if da != space.dim_a {
        return Err(Error::DimensionMismatch {
            expected: space.dim_a,
            found: da,
        });
    }
    let kerr = CVector::from_fn(da, |n, _| {
        let n = n as f64;
        psi0_lc.amplitude(n as usize) * Complex64::from_polar(1.0, strength * 0.5 * PI * n * n)
    });
    let lc = StateVector::from_amplitudes(Space::Mode(da), kerr)?;
    StateVector::product(&lc, &StateVector::fock(space.dim_b, 0)?)
}

/// `(|0⟩ + |1⟩ + … + |d_a−1⟩)/√d_a ⊗ |0⟩`: full LC support, so every Kerr
/// phase is constrained by the fidelity.
pub fn default_initial_state(space: FockSpace) -> Result<StateVector> {
    let lc = StateVector::uniform_superposition(space.dim_a, space.dim_a)?;
    StateVector::product(&lc, &StateVector::fock(space.dim_b, 0)?)
}

/// Per-block segment spectra, deduplicated when `(g_k, Ω_k)` repeat.
struct Spectra {
    /// `slot[k]` indexes into `spectra` for segment k.
    slot: Vec<usize>,
    /// `spectra[s][n]` is block n for distinct segment s.
    spectra: Vec<Vec<RealSpectrum>>,
}

fn segment_spectra(schedule: &ControlSchedule, omega_lc: f64, space: FockSpace) -> Spectra {
    let mut keys: Vec<(u64, u64)> = Vec::new();
    let mut slot = Vec::with_capacity(schedule.segments());
    let mut spectra = Vec::new();
    for (&g, &w) in schedule.g_values.iter().zip(&schedule.omega_values) {
        let key = (g.to_bits(), w.to_bits());
        let s = match keys.iter().position(|k| *k == key) {
            Some(s) => s,
            None => {
                keys.push(key);
                let p = SystemParams::new(omega_lc, w, g);
                spectra.push(
                    (0..space.dim_a)
                        .map(|n| RealSpectrum::new(hamiltonian_block(&p, n, space.dim_b)))
                        .collect(),
                );
                keys.len() - 1
            }
        };
        slot.push(s);
    }
    Spectra { slot, spectra }
}

fn check_pair(psi0: &StateVector, target: &StateVector) -> Result<FockSpace> {
    let space = psi0
        .joint_space()
        .ok_or_else(|| Error::param("psi0", "expected a joint state"))?;
    if target.space() != psi0.space() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: target.space().dim(),
        });
    }
    Ok(space)
}

fn block(v: &CVector, n: usize, db: usize) -> Vec<Complex64> {
    v.rows(n * db, db).iter().copied().collect()
}

/// Final state, largest mechanical top-level population after any segment,
/// and the forward trajectory `ψ_0 … ψ_N` per block when requested.
struct Forward {
    state: CVector,
    tail: f64,
    trajectory: Vec<Vec<Vec<Complex64>>>,
}

fn forward(spec: &Spectra, dt: f64, psi0: &StateVector, space: FockSpace, keep: bool) -> Forward {
    let db = space.dim_b;
    let mut state = psi0.amplitudes().clone();
    let mut tail = 0.0_f64;
    let mut trajectory = vec![Vec::new(); space.dim_a];
    for (n, traj) in trajectory.iter_mut().enumerate() {
        let mut x = block(&state, n, db);
        let active = x.iter().any(|z| z.norm_sqr() > 0.0);
        if keep {
            traj.push(x.clone());
        }
        let mut worst = 0.0_f64;
        for &s in &spec.slot {
            if active {
                spec.spectra[s][n].apply(dt, &mut x);
                worst = worst.max(x[db - 1].norm_sqr());
            }
            if keep {
                traj.push(x.clone());
            }
        }
        tail += worst;
        state.rows_mut(n * db, db).copy_from_slice(&x);
    }
    Forward { state, tail, trajectory }
}

/// Final state of the schedule together with the summed per-block maxima
/// of the mechanical top-level population after each segment.
pub fn evolve(schedule: &ControlSchedule, psi0: &StateVector, omega_lc: f64) -> Result<(StateVector, f64)> {
    schedule.validate()?;
    let space = psi0
        .joint_space()
        .ok_or_else(|| Error::param("psi0", "expected a joint state"))?;
    let spec = segment_spectra(schedule, omega_lc, space);
    let f = forward(&spec, schedule.segment_duration(), psi0, space, false);
    Ok((StateVector::from_amplitudes(Space::Joint(space), f.state)?, f.tail))
}

/// `F = |⟨target| U_N ⋯ U_1 |ψ0⟩|`, guarded against mechanical truncation.
pub fn objective(schedule: &ControlSchedule, psi0: &StateVector, target: &StateVector, omega_lc: f64) -> Result<f64> {
    objective_guarded(schedule, psi0, target, omega_lc, &TailGuard::default())
}

pub fn objective_guarded(
    schedule: &ControlSchedule,
    psi0: &StateVector,
    target: &StateVector,
    omega_lc: f64,
    guard: &TailGuard,
) -> Result<f64> {
    check_pair(psi0, target)?;
    let (psi, tail) = evolve(schedule, psi0, omega_lc)?;
    guard_tail(tail, guard)?;
    Ok(target.inner(&psi)?.norm().min(1.0))
}

fn guard_tail(tail: f64, guard: &TailGuard) -> Result<()> {
    if guard.check_b && tail > guard.tol {
        return Err(Error::Truncation {
            mode: crate::hilbert::Mode::B,
            tail,
            tol: guard.tol,
        });
    }
    Ok(())
}

/// Overlap `c = ⟨target|ψ(τ)⟩` and its derivatives with respect to every
/// `g_k` and `Ω_k`.
struct Overlap {
    c: Complex64,
    dg: Vec<Complex64>,
    domega: Vec<Complex64>,
    tail: f64,
}

#[allow(clippy::needless_range_loop)]
fn overlap_with_gradient(schedule: &ControlSchedule, psi0: &StateVector, target: &StateVector, omega_lc: f64, space: FockSpace) -> Overlap {
    let nseg = schedule.segments();
    let db = space.dim_b;
    let dt = schedule.segment_duration();
    let spec = segment_spectra(schedule, omega_lc, space);
    let fw = forward(&spec, dt, psi0, space, true);
    let c = target.amplitudes().dotc(&fw.state);

    // divided-difference matrices per distinct segment and block
    let phis: Vec<Vec<CMatrix>> = spec
        .spectra
        .iter()
        .map(|blocks| blocks.iter().map(|s| s.divided_differences(dt)).collect())
        .collect();

    let mut dg = vec![Complex64::new(0.0, 0.0); nseg];
    let mut domega = vec![Complex64::new(0.0, 0.0); nseg];
    for n in 0..space.dim_a {
        if fw.trajectory[n][0].iter().all(|z| z.norm_sqr() == 0.0) {
            continue;
        }
        let nf = n as f64;
        // χ_k = U_{k+1}† ⋯ U_N† χ, walked backward
        let mut chi = block(target.amplitudes(), n, db);
        for k in (0..nseg).rev() {
            let s = spec.slot[k];
            let sp = &spec.spectra[s][n];
            let x = sp.to_eigenbasis(&fw.trajectory[n][k]);
            let y = sp.to_eigenbasis(&chi);
            // dc = χ̃† (Φ ∘ VᵀGV) ψ̃ = Σ_ml G_ml (V M Vᵀ)_ml, M_jk = conj(χ̃_j) Φ_jk ψ̃_k
            let phi = &phis[s][n];
            let m = CMatrix::from_fn(db, db, |j, k| y[j].conj() * phi[(j, k)] * x[k]);
            let a = sandwich(&sp.vectors, &m);
            let mut d_om = Complex64::new(0.0, 0.0);
            let mut d_g = Complex64::new(0.0, 0.0);
            for i in 0..db {
                d_om += a[(i, i)] * i as f64;
                if i + 1 < db {
                    d_g += (a[(i, i + 1)] + a[(i + 1, i)]) * ((i + 1) as f64).sqrt();
                }
            }
            dg[k] += d_g * nf;
            domega[k] += d_om;
            // step χ back through segment k
            sp.apply(-dt, &mut chi);
        }
    }
    Overlap {
        c,
        dg,
        domega,
        tail: fw.tail,
    }
}

/// `V M Vᵀ` for real `V` and complex `M`.
fn sandwich(v: &RMatrix, m: &CMatrix) -> CMatrix {
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    let vt = v.transpose();
    let r = v * re * &vt;
    let i = v * im * &vt;
    CMatrix::from_fn(v.nrows(), v.nrows(), |a, b| Complex64::new(r[(a, b)], i[(a, b)]))
}

/// `∂F/∂g_k` for every segment followed by `∂F/∂Ω_k`.
///
/// The fidelity `|c|` is not differentiable where `c = 0`; the zero vector
/// is returned there.
pub fn gradient(schedule: &ControlSchedule, psi0: &StateVector, target: &StateVector, omega_lc: f64) -> Result<Vec<f64>> {
    gradient_guarded(schedule, psi0, target, omega_lc, &TailGuard::default())
}

pub fn gradient_guarded(
    schedule: &ControlSchedule,
    psi0: &StateVector,
    target: &StateVector,
    omega_lc: f64,
    guard: &TailGuard,
) -> Result<Vec<f64>> {
    let space = check_pair(psi0, target)?;
    schedule.validate()?;
    let ov = overlap_with_gradient(schedule, psi0, target, omega_lc, space);
    guard_tail(ov.tail, guard)?;
    let norm = ov.c.norm();
    if norm == 0.0 {
        return Ok(vec![0.0; 2 * schedule.segments()]);
    }
    Ok(ov
        .dg
        .iter()
        .chain(&ov.domega)
        .map(|d| (ov.c.conj() * d).re / norm)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `exp[iπ(a†a)²/2]`.
    #[default]
    Kerr,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub segments: usize,
    pub tau: f64,
    pub g_max: f64,
    /// `[Ω_min, Ω_max]`; `None` means `[0, 10 g_max]`.
    pub omega_bounds: Option<(f64, f64)>,
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop a restart once `ε` falls below this.
    pub tol: f64,
    pub dim_a: usize,
    pub dim_b: usize,
    pub omega_lc: f64,
    pub target: TargetKind,
    /// Mechanical tail tolerance applied to the returned schedule.
    pub tail_tol: f64,
    /// LC amplitudes of the initial state (normalized on use); `None` is
    /// the uniform superposition of every retained level.
    pub initial_lc: Option<Vec<f64>>,
    /// Each restart first follows the optimum of `V^s` for
    /// `s = 1/stages, 2/stages, …` before the full target; 1 disables this.
    pub continuation_stages: usize,
    /// Iteration budget of each intermediate continuation stage.
    pub stage_iters: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            segments: 10,
            tau: 1.0,
            g_max: PI,
            omega_bounds: None,
            restarts: 20,
            seed: 0,
            max_iters: 1000,
            tol: 1e-10,
            dim_a: 3,
            dim_b: 30,
            omega_lc: 0.0,
            target: TargetKind::Kerr,
            tail_tol: DEFAULT_TAIL_TOL,
            initial_lc: None,
            continuation_stages: 4,
            stage_iters: 100,
        }
    }
}

impl OptimizeConfig {
    pub fn omega_range(&self) -> (f64, f64) {
        self.omega_bounds.unwrap_or((0.0, 10.0 * self.g_max))
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.dim_a, self.dim_b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::param("segments", "need at least one segment"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::param("g_max", format!("must be positive, got {}", self.g_max)));
        }
        let (lo, hi) = self.omega_range();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::param("omega_bounds", format!("need finite lo <= hi, got [{lo}, {hi}]")));
        }
        if self.restarts == 0 {
            return Err(Error::param("restarts", "need at least one restart"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol", "must be non-negative"));
        }
        if !self.omega_lc.is_finite() {
            return Err(Error::param("omega_lc", "must be finite"));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::param("tail_tol", "must be positive"));
        }
        if self.continuation_stages == 0 {
            return Err(Error::param("continuation_stages", "need at least one stage"));
        }
        self.initial_lc_state()?;
        Ok(())
    }

    pub fn initial_lc_state(&self) -> Result<StateVector> {
        let space = self.space()?;
        match &self.initial_lc {
            None => StateVector::uniform_superposition(space.dim_a, space.dim_a),
            Some(amps) => {
                if amps.len() != space.dim_a {
                    return Err(Error::DimensionMismatch {
                        expected: space.dim_a,
                        found: amps.len(),
                    });
                }
                let v = CVector::from_iterator(amps.len(), amps.iter().map(|&a| Complex64::new(a, 0.0)));
                StateVector::from_amplitudes(Space::Mode(space.dim_a), v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub schedule: ControlSchedule,
    pub fidelity: f64,
    pub epsilon: f64,
    /// Iterations of the winning restart, continuation stages included.
    pub iterations: usize,
    pub restarts_used: usize,
    pub seed: u64,
    /// The winning restart reached `tol` or a stationary point.
    pub converged: bool,
    /// Mechanical top-level population bound of the returned schedule.
    pub mech_tail: f64,
    /// `mech_tail` is within the configured tail tolerance.
    pub truncation_ok: bool,
    /// Final `ε` of every restart, in restart order.
    pub restart_epsilons: Vec<f64>,
}

/// Bounded controls through `x = lo + (hi − lo) sin² u`.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    lo: f64,
    hi: f64,
}

impl Bounds {
    fn value(&self, u: f64) -> f64 {
        let s = u.sin();
        self.lo + (self.hi - self.lo) * s * s
    }

    fn slope(&self, u: f64) -> f64 {
        (self.hi - self.lo) * (2.0 * u).sin()
    }

    fn inverse(&self, x: f64) -> f64 {
        if self.hi == self.lo {
            return 0.0;
        }
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0).sqrt().asin()
    }
}

struct Problem {
    psi0: StateVector,
    target: StateVector,
    space: FockSpace,
    cfg: OptimizeConfig,
    g: Bounds,
    w: Bounds,
}

impl Problem {
    fn new(cfg: &OptimizeConfig, strength: f64) -> Result<Self> {
        cfg.validate()?;
        let space = cfg.space()?;
        let lc = cfg.initial_lc_state()?;
        let psi0 = StateVector::product(&lc, &StateVector::fock(space.dim_b, 0)?)?;
        let target = match cfg.target {
            TargetKind::Kerr => kerr_target(&lc, space, strength)?,
            TargetKind::Identity => psi0.clone(),
        };
        let (lo, hi) = cfg.omega_range();
        Ok(Self {
            psi0,
            target,
            space,
            cfg: cfg.clone(),
            g: Bounds { lo: 0.0, hi: cfg.g_max },
            w: Bounds { lo, hi },
        })
    }

    fn schedule(&self, u: &DVector<f64>) -> ControlSchedule {
        let n = self.cfg.segments;
        ControlSchedule {
            tau: self.cfg.tau,
            g_max: self.cfg.g_max,
            g_values: (0..n).map(|k| self.g.value(u[k])).collect(),
            omega_values: (0..n).map(|k| self.w.value(u[n + k])).collect(),
        }
    }

    /// `J = 1 − F²` and its gradient in the unconstrained variables.
    fn cost(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.cfg.segments;
        let sched = self.schedule(u);
        let ov = overlap_with_gradient(&sched, &self.psi0, &self.target, self.cfg.omega_lc, self.space);
        let j = 1.0 - ov.c.norm_sqr();
        let grad = DVector::from_fn(2 * n, |i, _| {
            let (d, slope) = if i < n {
                (ov.dg[i], self.g.slope(u[i]))
            } else {
                (ov.domega[i - n], self.w.slope(u[i]))
            };
            -2.0 * (ov.c.conj() * d).re * slope
        });
        (j, grad)
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.cfg.segments;
        DVector::from_fn(2 * n, |i, _| {
            let b = if i < n { self.g } else { self.w };
            b.inverse(rng.random_range(b.lo..=b.hi))
        })
    }
}

struct Run {
    u: DVector<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// L-BFGS with Armijo backtracking.
fn lbfgs(p: &Problem, mut u: DVector<f64>, max_iters: usize) -> Run {
    const MEMORY: usize = 10;
    let target_cost = {
        // ε = 1 − F ≤ tol  ⇔  J = 1 − F² ≤ 1 − (1 − tol)²
        let f = 1.0 - p.cfg.tol;
        1.0 - f * f
    };
    let (mut j, mut g) = p.cost(&u);
    let mut hist: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::with_capacity(MEMORY);
    let mut iters = 0;
    let mut converged = false;
    let mut stalls = 0;
    while iters < max_iters {
        if j <= target_cost || g.amax() < 1e-12 {
            converged = true;
            break;
        }
        iters += 1;

        // two-loop recursion
        let mut q = -&g;
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q *= 1.0 / g.norm().max(1.0);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = q;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = -&g;
            slope = -g.norm_squared();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &u + &dir * step;
            let (jt, gt) = p.cost(&trial);
            if jt <= j + 1e-4 * step * slope {
                accepted = Some((trial, jt, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((un, jn, gn)) = accepted else {
            if hist.is_empty() {
                converged = true;
                break;
            }
            hist.clear();
            continue;
        };
        let s = &un - &u;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            if hist.len() == MEMORY {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        }
        stalls = if j - jn <= 1e-15 * j.max(1e-300) { stalls + 1 } else { 0 };
        u = un;
        j = jn;
        g = gn;
        if stalls >= 5 {
            converged = true;
            break;
        }
    }
    Run {
        u,
        cost: j,
        iterations: iters,
        converged,
    }
}

/// Seed of restart `r`; restarts are independent streams of the base seed.
fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Multi-restart gradient search; the best restart wins, ties go to the
/// lower restart index.
pub fn optimize(cfg: &OptimizeConfig) -> Result<OptimizationResult> {
    let p = Problem::new(cfg, 1.0)?;
    let stages = match cfg.target {
        TargetKind::Kerr => cfg.continuation_stages,
        TargetKind::Identity => 1,
    };
    let warmups: Vec<Problem> = (1..stages)
        .map(|k| Problem::new(cfg, k as f64 / stages as f64))
        .collect::<Result<_>>()?;
    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, r));
            let mut u = p.random_start(&mut rng);
            let mut spent = 0;
            for w in &warmups {
                let run = lbfgs(w, u, cfg.stage_iters);
                spent += run.iterations;
                u = run.u;
            }
            let mut run = lbfgs(&p, u, cfg.max_iters);
            run.iterations += spent;
            run
        })
        .collect();

    let epsilon_of = |run: &Run| 1.0 - (1.0 - run.cost).max(0.0).sqrt();
    let restart_epsilons: Vec<f64> = runs.iter().map(epsilon_of).collect();
    let (best_idx, _) = restart_epsilons
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, be), (i, &e)| if e < be { (i, e) } else { (bi, be) });
    let best = &runs[best_idx];
    let schedule = p.schedule(&best.u);
    let (psi, mech_tail) = evolve(&schedule, &p.psi0, cfg.omega_lc)?;
    let fidelity = p.target.inner(&psi)?.norm().min(1.0);
    Ok(OptimizationResult {
        schedule,
        fidelity,
        epsilon: 1.0 - fidelity,
        iterations: best.iterations,
        restarts_used: cfg.restarts,
        seed: cfg.seed,
        converged: best.converged,
        mech_tail,
        truncation_ok: mech_tail <= cfg.tail_tol,
        restart_epsilons,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub tau: f64,
    pub segments: usize,
    pub epsilon: f64,
    pub fidelity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub truncation_ok: bool,
    /// `ε` rose relative to the next shorter τ at the same `N`.
    pub monotonicity_violation: bool,
    /// For the larger `N` at `τ ≥ 1`: worse than the smaller `N` by more than `1e−6`.
    pub segment_count_violation: bool,
}

/// Best `ε` for every `(τ, N)` pair, rows ordered by `N` then by input `τ` order.
pub fn tau_scan(cfg: &OptimizeConfig, taus: &[f64], segment_counts: &[usize]) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::with_capacity(taus.len() * segment_counts.len());
    for &segments in segment_counts {
        for &tau in taus {
            let res = optimize(&OptimizeConfig {
                segments,
                tau,
                ..cfg.clone()
            })?;
            rows.push(ScanRow {
                tau,
                segments,
                epsilon: res.epsilon,
                fidelity: res.fidelity,
                iterations: res.iterations,
                converged: res.converged,
                truncation_ok: res.truncation_ok,
                monotonicity_violation: false,
                segment_count_violation: false,
            });
        }
    }
    flag_scan(&mut rows);
    Ok(rows)
}

fn flag_scan(rows: &mut [ScanRow]) {
    let snapshot = rows.to_vec();
    for row in rows.iter_mut() {
        row.monotonicity_violation = snapshot
            .iter()
            .filter(|o| o.segments == row.segments && o.tau < row.tau)
            .any(|o| row.epsilon > o.epsilon);
        row.segment_count_violation = row.tau >= 1.0
            && snapshot
                .iter()
                .filter(|o| o.segments < row.segments && o.tau == row.tau)
                .any(|o| row.epsilon > o.epsilon + 1e-6);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{kerr_propagator, propagate_state, PiecewiseSchedule, StepControl};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn flagship(space: FockSpace) -> (StateVector, StateVector) {
        let lc = StateVector::uniform_superposition(space.dim_a, space.dim_a).unwrap();
        let psi0 = default_initial_state(space).unwrap();
        (psi0, target_state(&lc, space).unwrap())
    }

    fn random_schedule(rng: &mut ChaCha8Rng, n: usize, tau: f64, g_max: f64) -> ControlSchedule {
        let g = (0..n).map(|_| rng.random_range(0.0..g_max)).collect();
        let w = (0..n).map(|_| rng.random_range(0.0..10.0 * g_max)).collect();
        ControlSchedule::new(tau, g_max, g, w).unwrap()
    }

    #[test]
    fn target_examples() {
        let space = FockSpace::new(3, 4).unwrap();
        let t0 = target_state(&StateVector::fock(3, 0).unwrap(), space).unwrap();
        assert_eq!(t0.amplitude(space.index(0, 0)), Complex64::new(1.0, 0.0));
        let t1 = target_state(&StateVector::fock(3, 1).unwrap(), space).unwrap();
        assert!((t1.amplitude(space.index(1, 0)) - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        let (_, t) = flagship(space);
        let s = 1.0 / 3f64.sqrt();
        let want = [Complex64::new(s, 0.0), Complex64::new(0.0, s), Complex64::new(s, 0.0)];
        for (n, w) in want.iter().enumerate() {
            assert!((t.amplitude(space.index(n, 0)) - w).norm() < 1e-14);
        }
        assert!(target_state(&StateVector::fock(4, 0).unwrap(), space).is_err());
    }

    #[test]
    fn zero_duration_and_free_evolution() {
        let space = FockSpace::new(3, 10).unwrap();
        let (psi0, _) = flagship(space);
        let s = ControlSchedule::constant(4, 0.0, PI, 1.0, 3.0).unwrap();
        assert!((objective(&s, &psi0, &psi0, 0.0).unwrap() - 1.0).abs() < 1e-14);

        let free = ControlSchedule::constant(1, 0.7, PI, 0.0, 3.0).unwrap();
        let p = SystemParams::new(1.3, 3.0, 0.0);
        let want = propagate_state(&p, &psi0, 0.7, &StepControl::default(), &TailGuard::default()).unwrap();
        assert!((objective(&free, &psi0, &want, 1.3).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn constant_schedule_realizes_kerr_gate_at_unit_time() {
        // g = π, Ω = 2π for τ = 1 gives μ = π/2 and a closed mechanical loop
        let space = FockSpace::new(3, 30).unwrap();
        let (psi0, target) = flagship(space);
        let s = ControlSchedule::constant(10, 1.0, PI, PI, 2.0 * PI).unwrap();
        let f = objective(&s, &psi0, &target, 0.0).unwrap();
        assert!(1.0 - f < 1e-12, "ε = {}", 1.0 - f);
        // and agrees with the Kerr propagator at one mechanical period
        let u = kerr_propagator(&SystemParams::new(0.0, 2.0 * PI, PI), 1, space).unwrap();
        let via = u.evolve(&psi0, &TailGuard::default()).unwrap();
        assert!(crate::hilbert::fidelity(&via, &target).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn matches_time_ordered_propagation() {
        let space = FockSpace::new(3, 12).unwrap();
        let (psi0, _) = flagship(space);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_schedule(&mut rng, 5, 0.6, 1.0);
        let (psi, _) = evolve(&s, &psi0, 0.4).unwrap();
        let dt = s.segment_duration();
        let segs = s
            .g_values
            .iter()
            .zip(&s.omega_values)
            .map(|(&g, &w)| (dt, SystemParams::new(0.4, w, g)))
            .collect();
        let pw = PiecewiseSchedule::new(segs).unwrap();
        let want = propagate_state(&pw, &psi0, 0.6, &StepControl::default(), &TailGuard::disabled()).unwrap();
        let d = (psi.amplitudes() - want.amplitudes()).camax();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let space = FockSpace::new(3, 10).unwrap();
        let (psi0, target) = flagship(space);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let s = random_schedule(&mut rng, 6, 0.8, 1.0);
            let an = gradient(&s, &psi0, &target, 0.3).unwrap();
            let fd = finite_difference(&s, &psi0, &target, 0.3);
            let err: f64 = an.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
            assert!(err <= 1e-4 * scale, "{err} vs {scale}");
        }
    }

    fn finite_difference(s: &ControlSchedule, psi0: &StateVector, target: &StateVector, w: f64) -> Vec<f64> {
        let h = 1e-6;
        let f = |s: &ControlSchedule| {
            let (psi, _) = evolve(s, psi0, w).unwrap();
            target.inner(&psi).unwrap().norm()
        };
        let n = s.segments();
        (0..2 * n)
            .map(|i| {
                let mut p = s.clone();
                let mut m = s.clone();
                if i < n {
                    p.g_values[i] += h;
                    m.g_values[i] -= h;
                } else {
                    p.omega_values[i - n] += h;
                    m.omega_values[i - n] -= h;
                }
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_vanishes_at_flat_point() {
        // with g = 0 the state never leaves the phase-free manifold, and the
        // fidelity against the identity target is stationary at its maximum
        let space = FockSpace::new(3, 8).unwrap();
        let (psi0, _) = flagship(space);
        let s = ControlSchedule::constant(4, 1.0, PI, 0.0, 2.0).unwrap();
        let grad = gradient(&s, &psi0, &psi0, 0.0).unwrap();
        assert!(grad.iter().all(|d| d.abs() < 1e-12), "{grad:?}");
    }

    #[test]
    fn commuting_duplicate_segments_share_gradients() {
        let space = FockSpace::new(3, 8).unwrap();
        let (psi0, target) = flagship(space);
        let s = ControlSchedule::constant(3, 0.9, PI, 0.0, 1.7).unwrap();
        let grad = gradient(&s, &psi0, &target, 0.0).unwrap();
        for k in 1..3 {
            assert!((grad[k] - grad[0]).abs() < 1e-12);
            assert!((grad[3 + k] - grad[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn guarded_objective_rejects_runaway_mechanics() {
        let space = FockSpace::new(3, 6).unwrap();
        let (psi0, target) = flagship(space);
        let s = ControlSchedule::constant(2, 2.0, PI, PI, 0.0).unwrap();
        assert!(matches!(objective(&s, &psi0, &target, 0.0), Err(Error::Truncation { .. })));
    }

    #[test]
    fn identity_target_is_trivial() {
        let cfg = OptimizeConfig {
            tau: 0.5,
            restarts: 2,
            dim_b: 12,
            target: TargetKind::Identity,
            ..OptimizeConfig::default()
        };
        let res = optimize(&cfg).unwrap();
        assert!(res.epsilon < 1e-10, "{}", res.epsilon);
    }

    #[test]
    fn optimize_is_deterministic() {
        let cfg = OptimizeConfig {
            tau: 0.7,
            segments: 4,
            restarts: 3,
            max_iters: 40,
            dim_b: 12,
            seed: 42,
            ..OptimizeConfig::default()
        };
        let a = optimize(&cfg).unwrap();
        let b = optimize(&cfg).unwrap();
        assert_eq!(a, b);
        let c = optimize(&OptimizeConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a.restart_epsilons, c.restart_epsilons);
    }

    #[test]
    fn scan_flags() {
        assert!(tau_scan(&OptimizeConfig::default(), &[], &[10, 15]).unwrap().is_empty());
        let row = |tau, segments, epsilon| ScanRow {
            tau,
            segments,
            epsilon,
            fidelity: 1.0 - epsilon,
            iterations: 0,
            converged: true,
            truncation_ok: true,
            monotonicity_violation: false,
            segment_count_violation: false,
        };
        let mut rows = vec![row(0.9, 10, 1e-2), row(1.0, 10, 2e-2), row(1.0, 15, 3e-2)];
        flag_scan(&mut rows);
        assert!(!rows[0].monotonicity_violation);
        assert!(rows[1].monotonicity_violation);
        assert!(rows[2].segment_count_violation);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn objective_is_bounded(seed in any::<u64>(), n in 1usize..6, tau in 0.0f64..1.5) {
            let space = FockSpace::new(3, 10).unwrap();
            let (psi0, target) = flagship(space);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_schedule(&mut rng, n, tau, 0.5);
            let (psi, _) = evolve(&s, &psi0, 0.0).unwrap();
            let f = target.inner(&psi).unwrap().norm();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
        }
    }
}
