//! Time-ordered propagation for time-dependent rates.
//!
//! Steps never straddle a schedule breakpoint, so piecewise-constant
//! schedules are propagated exactly with one exponential per segment.
//! Continuously varying schedules are refined by step doubling until two
//! successive refinements agree to `StepControl::tol`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{from_blocks, hamiltonian_block, hamiltonian_tridiagonal, SystemParams};
use crate::error::{Error, Result};
use crate::hilbert::{FockSpace, Mode, Operator, Space, StateVector, TailGuard};
use crate::linalg::{CMatrix, CVector, RealSpectrum, Tridiagonal};

/// Rates as a function of time.
pub trait Schedule: Sync {
    fn params_at(&self, t: f64) -> SystemParams;

    /// Times at which the rates jump. Steps are aligned to these.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// True when the rates are constant between breakpoints.
    fn is_piecewise_constant(&self) -> bool {
        false
    }

    /// Shortest oscillation period of the rates, for the steps-per-period floor.
    fn period(&self) -> Option<f64> {
        None
    }
}

impl Schedule for SystemParams {
    fn params_at(&self, _t: f64) -> SystemParams {
        *self
    }

    fn is_piecewise_constant(&self) -> bool {
        true
    }
}

/// Consecutive constant segments starting at `t = 0`; the last segment's
/// rates persist after the schedule ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSchedule {
    segments: Vec<(f64, SystemParams)>,
}

impl PiecewiseSchedule {
    /// `segments` are `(duration, params)` pairs.
    pub fn new(segments: Vec<(f64, SystemParams)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::param("segments", "schedule needs at least one segment"));
        }
        for (dt, p) in &segments {
            if !(*dt >= 0.0 && dt.is_finite()) {
                return Err(Error::param("segments", format!("invalid segment duration {dt}")));
            }
            p.validate()?;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, SystemParams)] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|(dt, _)| dt).sum()
    }
}

impl Schedule for PiecewiseSchedule {
    fn params_at(&self, t: f64) -> SystemParams {
        let mut end = 0.0;
        for (dt, p) in &self.segments {
            end += dt;
            if t < end {
                return *p;
            }
        }
        self.segments.last().map(|(_, p)| *p).unwrap_or_else(|| SystemParams::new(0.0, 0.0, 0.0))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut end = 0.0;
        for (dt, _) in &self.segments[..self.segments.len() - 1] {
            end += dt;
            out.push(end);
        }
        out
    }

    fn is_piecewise_constant(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// One exponential of the Hamiltonian frozen at the step midpoint (second order).
    Midpoint,
    /// Two exponentials of Gauss-point combinations of the Hamiltonian
    /// (commutator-free fourth-order Magnus).
    Magnus4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub min_steps_per_period: usize,
    /// Largest allowed amplitude change between successive refinements.
    pub tol: f64,
    pub max_steps: usize,
    pub integrator: Integrator,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            min_steps_per_period: 200,
            tol: 1e-8,
            max_steps: 1 << 22,
            integrator: Integrator::Magnus4,
        }
    }
}

impl StepControl {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Sub-intervals of `[t0, t1]` split at breakpoints.
fn intervals(schedule: &dyn Schedule, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = schedule.breakpoints().into_iter().filter(|&b| b > t0 && b < t1).collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = t0;
    for c in cuts {
        if c > start {
            out.push((start, c));
            start = c;
        }
    }
    if t1 > start || out.is_empty() {
        out.push((start, t1));
    }
    out
}

/// Step layout: per interval `(start, dt, count)`.
fn step_layout(ivals: &[(f64, f64)], total_steps: usize, span: f64) -> Vec<(f64, f64, usize)> {
    ivals
        .iter()
        .map(|&(a, b)| {
            let share = if span > 0.0 { (b - a) / span } else { 0.0 };
            let count = ((total_steps as f64 * share).ceil() as usize).max(1);
            (a, (b - a) / count as f64, count)
        })
        .collect()
}

/// Rates of the two commutator-free Magnus factors, each applied for half
/// the step: `exp(-i dt (a2 H1 + a1 H2))` first, then `exp(-i dt (a1 H1 + a2 H2))`.
fn magnus_pair(schedule: &dyn Schedule, start: f64, dt: f64) -> (SystemParams, SystemParams) {
    let r3 = 3f64.sqrt();
    let c1 = 0.5 - r3 / 6.0;
    let c2 = 0.5 + r3 / 6.0;
    let a1 = (3.0 - 2.0 * r3) / 12.0;
    let a2 = (3.0 + 2.0 * r3) / 12.0;
    let p1 = schedule.params_at(start + c1 * dt);
    let p2 = schedule.params_at(start + c2 * dt);
    (p1.combine(2.0 * a2, &p2, 2.0 * a1), p1.combine(2.0 * a1, &p2, 2.0 * a2))
}

/// The exponential(s) making up one step of one photon-number block,
/// in application order.
fn step_spectra(schedule: &dyn Schedule, n: usize, dim_b: usize, start: f64, dt: f64, method: Integrator) -> Vec<RealSpectrum> {
    match method {
        Integrator::Midpoint => {
            let p = schedule.params_at(start + 0.5 * dt);
            vec![RealSpectrum::new(hamiltonian_block(&p, n, dim_b))]
        }
        Integrator::Magnus4 => {
            let (first, second) = magnus_pair(schedule, start, dt);
            vec![
                RealSpectrum::new(hamiltonian_block(&first, n, dim_b)),
                RealSpectrum::new(hamiltonian_block(&second, n, dim_b)),
            ]
        }
    }
}

fn step_time(dt: f64, method: Integrator) -> f64 {
    match method {
        Integrator::Midpoint => dt,
        Integrator::Magnus4 => 0.5 * dt,
    }
}

/// Generators of one step of one photon-number block, in application order.
fn step_generators(schedule: &dyn Schedule, n: usize, dim_b: usize, start: f64, dt: f64, method: Integrator) -> Vec<Tridiagonal> {
    match method {
        Integrator::Midpoint => vec![hamiltonian_tridiagonal(&schedule.params_at(start + 0.5 * dt), n, dim_b)],
        Integrator::Magnus4 => {
            let (first, second) = magnus_pair(schedule, start, dt);
            vec![hamiltonian_tridiagonal(&first, n, dim_b), hamiltonian_tridiagonal(&second, n, dim_b)]
        }
    }
}

/// Per-step Krylov accuracy, relative to the block norm.
const KRYLOV_TOL: f64 = 1e-12;

/// Propagate one mechanical block vector through the whole layout.
/// Returns the final vector and the largest top-level population seen.
///
/// Short steps of a time-dependent schedule use Lanczos exponentials of the
/// tridiagonal block (cost linear in the mechanical dimension); exact
/// constant segments use the full spectrum.
fn run_block_vector(
    schedule: &dyn Schedule,
    n: usize,
    layout: &[(f64, f64, usize)],
    method: Integrator,
    init: &[Complex64],
) -> (Vec<Complex64>, f64) {
    let db = init.len();
    let mut v = init.to_vec();
    let mut tail: f64 = v[db - 1].norm_sqr();
    let h = step_time(1.0, method);
    let krylov = !schedule.is_piecewise_constant();
    for &(a, dt, count) in layout {
        for s in 0..count {
            let start = a + s as f64 * dt;
            if krylov {
                for gen in step_generators(schedule, n, db, start, dt, method) {
                    gen.expm_apply(h * dt, &mut v, KRYLOV_TOL);
                }
            } else {
                for spec in step_spectra(schedule, n, db, start, dt, method) {
                    spec.apply(h * dt, &mut v);
                }
            }
            tail = tail.max(v[db - 1].norm_sqr());
        }
    }
    (v, tail)
}

fn run_block_matrix(schedule: &dyn Schedule, n: usize, db: usize, layout: &[(f64, f64, usize)], method: Integrator) -> CMatrix {
    let mut u = CMatrix::identity(db, db);
    let h = step_time(1.0, method);
    for &(a, dt, count) in layout {
        for s in 0..count {
            let start = a + s as f64 * dt;
            for spec in step_spectra(schedule, n, db, start, dt, method) {
                u = spec.propagator(h * dt) * u;
            }
        }
    }
    u
}

fn base_steps(schedule: &dyn Schedule, span: f64, ctl: &StepControl) -> usize {
    match schedule.period() {
        Some(period) if period > 0.0 => ((ctl.min_steps_per_period as f64 * span / period).ceil() as usize).max(1),
        _ => ctl.min_steps_per_period.max(1),
    }
}

/// Refine by doubling until successive results agree; `diff` measures the change.
fn converge<T>(
    schedule: &dyn Schedule,
    t0: f64,
    t1: f64,
    ctl: &StepControl,
    run: impl Fn(&[(f64, f64, usize)]) -> T,
    diff: impl Fn(&T, &T) -> f64,
) -> Result<T> {
    let ivals = intervals(schedule, t0, t1);
    let span = t1 - t0;
    if schedule.is_piecewise_constant() {
        // constant between breakpoints: one midpoint exponential per interval is exact
        let layout: Vec<_> = ivals.iter().map(|&(a, b)| (a, b - a, 1)).collect();
        return Ok(run(&layout));
    }
    let mut steps = base_steps(schedule, span, ctl);
    let mut coarse = run(&step_layout(&ivals, steps, span));
    loop {
        let next = steps * 2;
        if next > ctl.max_steps {
            let fine = run(&step_layout(&ivals, steps, span));
            let residual = diff(&coarse, &fine);
            return Err(Error::StepControl {
                steps,
                residual,
                tol: ctl.tol,
            });
        }
        let fine = run(&step_layout(&ivals, next, span));
        let residual = diff(&coarse, &fine);
        if residual < ctl.tol {
            return Ok(fine);
        }
        coarse = fine;
        steps = next;
    }
}

fn piecewise_integrator(schedule: &dyn Schedule, ctl: &StepControl) -> Integrator {
    if schedule.is_piecewise_constant() {
        Integrator::Midpoint
    } else {
        ctl.integrator
    }
}

/// Time-ordered propagator over `[0, t]`.
pub fn numeric_propagator(schedule: &dyn Schedule, t: f64, space: FockSpace, ctl: &StepControl) -> Result<Operator> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("invalid propagation time {t}")));
    }
    let method = piecewise_integrator(schedule, ctl);
    let db = space.dim_b;
    let blocks: Vec<CMatrix> = (0..space.dim_a)
        .into_par_iter()
        .map(|n| {
            converge(
                schedule,
                0.0,
                t,
                ctl,
                |layout| run_block_matrix(schedule, n, db, layout, method),
                |a, b| {
                    // largest change of any output amplitude over unit inputs
                    let d = a - b;
                    (0..d.nrows()).map(|r| d.row(r).norm()).fold(0.0, f64::max)
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(from_blocks(space, &blocks))
}

/// A propagated state with the largest mechanical top-level population
/// seen along the way (summed per-block maxima, an upper bound on the
/// joint tail at any instant).
#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    pub state: StateVector,
    pub tail_bound: f64,
}

/// Propagate a joint state from `t0` to `t1` without enforcing the tail guard.
pub fn propagate_tracked(schedule: &dyn Schedule, psi: &StateVector, t0: f64, t1: f64, ctl: &StepControl) -> Result<Tracked> {
    let space = psi
        .joint_space()
        .ok_or_else(|| Error::param("psi", "expected a joint state"))?;
    if !(t1 >= t0 && t0.is_finite() && t1.is_finite()) {
        return Err(Error::param("t", format!("invalid interval [{t0}, {t1}]")));
    }
    let method = piecewise_integrator(schedule, ctl);
    let db = space.dim_b;
    let amps = psi.amplitudes();
    let results: Vec<(Vec<Complex64>, f64)> = (0..space.dim_a)
        .into_par_iter()
        .map(|n| {
            let init: Vec<Complex64> = amps.rows(n * db, db).iter().copied().collect();
            if init.iter().all(|z| z.norm_sqr() == 0.0) {
                return Ok((init, 0.0));
            }
            converge(
                schedule,
                t0,
                t1,
                ctl,
                |layout| run_block_vector(schedule, n, layout, method, &init),
                |a, b| a.0.iter().zip(&b.0).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max),
            )
        })
        .collect::<Result<_>>()?;

    let tail_bound: f64 = results.iter().map(|(_, t)| t).sum();
    let mut out = CVector::zeros(space.dim());
    for (n, (v, _)) in results.into_iter().enumerate() {
        out.rows_mut(n * db, db).copy_from_slice(&v);
    }
    let state = StateVector::from_normalized(Space::Joint(space), out)?;
    Ok(Tracked { state, tail_bound })
}

/// Propagate a joint state from `t0` to `t1`, enforcing the tail guard on
/// the mechanics throughout the accepted refinement.
pub fn propagate_interval(
    schedule: &dyn Schedule,
    psi: &StateVector,
    t0: f64,
    t1: f64,
    ctl: &StepControl,
    guard: &TailGuard,
) -> Result<StateVector> {
    let Tracked { state, tail_bound } = propagate_tracked(schedule, psi, t0, t1, ctl)?;
    if guard.check_b && tail_bound > guard.tol {
        return Err(Error::Truncation {
            mode: Mode::B,
            tail: tail_bound,
            tol: guard.tol,
        });
    }
    state.check_tail(guard)?;
    Ok(state)
}

/// Propagate a joint state over `[0, t]`.
pub fn propagate_state(
    schedule: &dyn Schedule,
    psi0: &StateVector,
    t: f64,
    ctl: &StepControl,
    guard: &TailGuard,
) -> Result<StateVector> {
    propagate_interval(schedule, psi0, 0.0, t, ctl, guard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{analytic_propagator, hamiltonian};
    use crate::hilbert::fidelity;
    use crate::linalg::{expm_hermitian, max_abs_diff};

    struct Cosine {
        base: SystemParams,
        nu: f64,
    }

    impl Schedule for Cosine {
        fn params_at(&self, t: f64) -> SystemParams {
            SystemParams {
                g: self.base.g * (self.nu * t).cos(),
                ..self.base
            }
        }

        fn period(&self) -> Option<f64> {
            Some(2.0 * std::f64::consts::PI / self.nu)
        }
    }

    fn space(a: usize, b: usize) -> FockSpace {
        FockSpace::new(a, b).unwrap()
    }

    #[test]
    fn constant_schedule_matches_dense_exponential() {
        let s = space(3, 15);
        let p = SystemParams::new(0.8, 1.1, 0.2);
        let u = numeric_propagator(&p, 2.7, s, &StepControl::default()).unwrap();
        let dense = expm_hermitian(&hamiltonian(&p, s).unwrap().matrix, 2.7);
        assert!(max_abs_diff(&u.matrix, &dense) < 1e-10);
        assert!(u.unitarity_defect() < 1e-10);
    }

    #[test]
    fn two_segment_schedule_is_product_of_exponentials() {
        let s = space(2, 10);
        let p1 = SystemParams::new(0.0, 1.0, 0.3);
        let p2 = SystemParams::new(0.5, 2.0, 0.1);
        let sched = PiecewiseSchedule::new(vec![(0.7, p1), (1.2, p2)]).unwrap();
        let u = numeric_propagator(&sched, 1.9, s, &StepControl::default()).unwrap();
        let u1 = expm_hermitian(&hamiltonian(&p1, s).unwrap().matrix, 0.7);
        let u2 = expm_hermitian(&hamiltonian(&p2, s).unwrap().matrix, 1.2);
        assert!(max_abs_diff(&u.matrix, &(u2 * u1)) < 1e-12);
        assert_eq!(sched.breakpoints(), vec![0.7]);
        assert!((sched.duration() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn modulated_propagation_is_unitary_and_converged() {
        let s = space(2, 12);
        let sched = Cosine {
            base: SystemParams::new(0.0, 1.0, 0.2),
            nu: 1.0,
        };
        let ctl = StepControl::default();
        let u = numeric_propagator(&sched, 3.0, s, &ctl).unwrap();
        assert!(u.unitarity_defect() < 1e-10);

        let lc = StateVector::uniform_superposition(2, 2).unwrap();
        let psi0 = StateVector::product(&lc, &StateVector::fock(12, 0).unwrap()).unwrap();
        let a = propagate_state(&sched, &psi0, 3.0, &ctl, &TailGuard::default()).unwrap();
        let b = u.evolve(&psi0, &TailGuard::default()).unwrap();
        assert!((fidelity(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn midpoint_and_magnus_agree_and_magnus_converges_faster() {
        let sched = Cosine {
            base: SystemParams::new(0.0, 1.0, 0.2),
            nu: 1.3,
        };
        let lc = StateVector::uniform_superposition(2, 2).unwrap();
        let psi0 = StateVector::product(&lc, &StateVector::fock(12, 0).unwrap()).unwrap();
        let guard = TailGuard::default();
        let reference = propagate_state(&sched, &psi0, 4.0, &StepControl::with_tol(1e-11), &guard).unwrap();

        let err_at = |method, per_period| {
            let ctl = StepControl {
                min_steps_per_period: per_period,
                tol: f64::INFINITY,
                max_steps: 1 << 20,
                integrator: method,
            };
            // tol = ∞ accepts the first doubling
            let psi = propagate_state(&sched, &psi0, 4.0, &ctl, &guard).unwrap();
            (psi.amplitudes() - reference.amplitudes()).norm()
        };
        let m1 = err_at(Integrator::Midpoint, 20);
        let m2 = err_at(Integrator::Midpoint, 40);
        let q1 = err_at(Integrator::Magnus4, 20);
        let q2 = err_at(Integrator::Magnus4, 40);
        // observed orders ≈ 2 and ≈ 4
        assert!((m1 / m2).log2() > 1.8, "midpoint order {}", (m1 / m2).log2());
        assert!((q1 / q2).log2() > 3.6, "magnus order {}", (q1 / q2).log2());
        assert!(q2 < m2);
    }

    #[test]
    fn step_control_failure_is_reported() {
        let s = space(2, 8);
        let sched = Cosine {
            base: SystemParams::new(0.0, 1.0, 0.5),
            nu: 3.0,
        };
        let ctl = StepControl {
            min_steps_per_period: 2,
            tol: 1e-14,
            max_steps: 16,
            integrator: Integrator::Midpoint,
        };
        let err = numeric_propagator(&sched, 5.0, s, &ctl).unwrap_err();
        assert!(matches!(err, Error::StepControl { .. }));
    }

    #[test]
    fn propagation_trips_tail_guard() {
        let s = space(2, 6);
        let p = SystemParams::new(0.0, 0.2, 1.0);
        let psi0 = StateVector::basis(s, 1, 0).unwrap();
        let err = propagate_state(&p, &psi0, 5.0, &StepControl::default(), &TailGuard::default()).unwrap_err();
        assert!(matches!(err, Error::Truncation { mode: Mode::B, .. }));
    }

    #[test]
    fn numeric_matches_analytic_for_constant_rates() {
        let s = space(3, 30);
        let p = SystemParams::new(0.37, 1.0, 0.1);
        let a = analytic_propagator(&p, 5.0, s).unwrap();
        let n = numeric_propagator(&p, 5.0, s, &StepControl::default()).unwrap();
        // columns far from the mechanical cutoff; the two truncations differ near it
        for na in 0..3 {
            for nb in 0..4 {
                let col = s.index(na, nb);
                let d = (a.matrix.column(col) - n.matrix.column(col)).norm();
                assert!(d < 1e-6, "column ({na},{nb}): {d}");
            }
        }
    }
}
