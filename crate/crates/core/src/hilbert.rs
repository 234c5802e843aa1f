//! Truncated Fock spaces for the LC mode (`a`) and the mechanical mode (`b`).
//!
//! Joint basis ordering is row-major in photon number:
//! `index = n_a * dim_b + n_b`. Every joint vector is therefore a stack of
//! `dim_a` contiguous mechanical blocks, one per LC photon number, which the
//! dynamics code relies on when it propagates blocks independently.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};

/// Default ceiling on the population of the highest retained Fock level.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

const NORM_TOL: f64 = 1e-10;

/// Which of the two bosonic modes an object refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Superconducting LC mode, operator `a`.
    A,
    /// Mechanical mode, operator `b`.
    B,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::A => write!(f, "A (LC)"),
            Mode::B => write!(f, "B (mechanics)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockSpace {
    pub dim_a: usize,
    pub dim_b: usize,
}

impl FockSpace {
    pub fn new(dim_a: usize, dim_b: usize) -> Result<Self> {
        for dim in [dim_a, dim_b] {
            if dim == 0 {
                return Err(Error::InvalidDimension { dim, min: 1 });
            }
        }
        Ok(Self { dim_a, dim_b })
    }

    pub fn dim(&self) -> usize {
        self.dim_a * self.dim_b
    }

    pub fn mode_dim(&self, mode: Mode) -> usize {
        match mode {
            Mode::A => self.dim_a,
            Mode::B => self.dim_b,
        }
    }

    #[inline]
    pub fn index(&self, n_a: usize, n_b: usize) -> usize {
        debug_assert!(n_a < self.dim_a && n_b < self.dim_b);
        n_a * self.dim_b + n_b
    }

    #[inline]
    pub fn levels(&self, index: usize) -> (usize, usize) {
        (index / self.dim_b, index % self.dim_b)
    }
}

/// Either a single mode of the given truncation or the joint two-mode space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Mode(usize),
    Joint(FockSpace),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Mode(d) => *d,
            Space::Joint(s) => s.dim(),
        }
    }

    fn ensure_same(&self, other: &Space) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Which modes the truncation guard inspects, and how strictly.
///
/// The LC guard is off by default for joint states: the coupling commutes
/// with `a†a`, so LC truncation is exact under the dynamics here and the
/// flagship control state deliberately populates the top LC level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailGuard {
    pub tol: f64,
    pub check_a: bool,
    pub check_b: bool,
}

impl Default for TailGuard {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TAIL_TOL,
            check_a: false,
            check_b: true,
        }
    }
}

impl TailGuard {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn disabled() -> Self {
        Self {
            tol: f64::INFINITY,
            check_a: false,
            check_b: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub space: Space,
    pub matrix: CMatrix,
}

impl Operator {
    pub fn new(space: Space, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: Space) -> Self {
        let d = space.dim();
        Self {
            space,
            matrix: CMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, c: impl Into<Complex64>) -> Self {
        Self {
            space: self.space,
            matrix: &self.matrix * c.into(),
        }
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.space.ensure_same(&other.space)?;
        Ok(Self {
            space: self.space,
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    /// `max |M − M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        crate::linalg::max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= 1e-12 * self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn unitarity_defect(&self) -> f64 {
        crate::linalg::unitarity_defect(&self.matrix)
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    /// `⟨ψ|M|ψ⟩`.
    pub fn expectation(&self, psi: &StateVector) -> Result<Complex64> {
        self.space.ensure_same(&psi.space)?;
        Ok(psi.amplitudes.dotc(&(&self.matrix * &psi.amplitudes)))
    }

    /// Apply a unitary to a state and enforce the norm and tail invariants.
    pub fn evolve(&self, psi: &StateVector, guard: &TailGuard) -> Result<StateVector> {
        self.space.ensure_same(&psi.space)?;
        let out = StateVector {
            space: psi.space,
            amplitudes: &self.matrix * &psi.amplitudes,
        };
        out.check_norm()?;
        out.check_tail(guard)?;
        Ok(out)
    }

    pub fn try_mul(&self, rhs: &Operator) -> Result<Operator> {
        self.space.ensure_same(&rhs.space)?;
        Ok(Self {
            space: self.space,
            matrix: &self.matrix * &rhs.matrix,
        })
    }

    /// Eigenvalues of a Hermitian operator, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.matrix.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;

    /// Panics on a space mismatch; use [`Operator::try_mul`] to handle it.
    fn mul(self, rhs: &'a Operator) -> Operator {
        self.try_mul(rhs).expect("operator spaces differ")
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator {
            space: self.space,
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator {
            space: self.space,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

/// Truncated annihilation operator, `⟨n−1|a|n⟩ = √n`.
pub fn annihilator(dim: usize) -> Result<Operator> {
    if dim == 0 {
        return Err(Error::InvalidDimension { dim, min: 1 });
    }
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator {
        space: Space::Mode(dim),
        matrix: m,
    })
}

pub fn creator(dim: usize) -> Result<Operator> {
    Ok(annihilator(dim)?.adjoint())
}

/// `a†a`, diagonal `0, 1, …, dim−1`.
pub fn number(dim: usize) -> Result<Operator> {
    if dim == 0 {
        return Err(Error::InvalidDimension { dim, min: 1 });
    }
    let m = CMatrix::from_diagonal(&CVector::from_fn(dim, |n, _| Complex64::new(n as f64, 0.0)));
    Ok(Operator {
        space: Space::Mode(dim),
        matrix: m,
    })
}

/// Dimensionless quadratures `x = (b + b†)/√2`, `p = −i(b − b†)/√2`.
pub fn quadratures(dim: usize) -> Result<(Operator, Operator)> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, min: 2 });
    }
    let b = annihilator(dim)?;
    let bd = b.adjoint();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let x = (&b + &bd).scale(s);
    let p = (&b - &bd).scale(Complex64::new(0.0, -s));
    Ok((x, p))
}

/// Tensor a single-mode operator with the identity on the other mode.
pub fn embed(op: &Operator, mode: Mode, space: FockSpace) -> Result<Operator> {
    let want = space.mode_dim(mode);
    if op.space != Space::Mode(want) {
        return Err(Error::DimensionMismatch {
            expected: want,
            found: op.dim(),
        });
    }
    let d = space.dim();
    let mut m = CMatrix::zeros(d, d);
    for row in 0..d {
        let (ra, rb) = space.levels(row);
        for col in 0..d {
            let (ca, cb) = space.levels(col);
            m[(row, col)] = match mode {
                Mode::A if rb == cb => op.matrix[(ra, ca)],
                Mode::B if ra == ca => op.matrix[(rb, cb)],
                _ => continue,
            };
        }
    }
    Ok(Operator {
        space: Space::Joint(space),
        matrix: m,
    })
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// A unit-norm pure state on a single mode or the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: Space,
    amplitudes: CVector,
}

impl StateVector {
    /// Normalizes the given amplitudes. Zero vectors are rejected.
    pub fn from_amplitudes(space: Space, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::param("amplitudes", "state has zero or non-finite norm"));
        }
        Ok(Self {
            space,
            amplitudes: amplitudes / Complex64::new(norm, 0.0),
        })
    }

    /// Wraps amplitudes that are already normalized; the norm is verified.
    pub(crate) fn from_normalized(space: Space, amplitudes: CVector) -> Result<Self> {
        let s = Self { space, amplitudes };
        s.check_norm()?;
        Ok(s)
    }

    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidDimension { dim, min: n + 1 });
        }
        let mut v = CVector::zeros(dim);
        v[n] = Complex64::new(1.0, 0.0);
        Ok(Self {
            space: Space::Mode(dim),
            amplitudes: v,
        })
    }

    pub fn basis(space: FockSpace, n_a: usize, n_b: usize) -> Result<Self> {
        if n_a >= space.dim_a || n_b >= space.dim_b {
            return Err(Error::param("basis", format!("level ({n_a}, {n_b}) outside {}x{}", space.dim_a, space.dim_b)));
        }
        let mut v = CVector::zeros(space.dim());
        v[space.index(n_a, n_b)] = Complex64::new(1.0, 0.0);
        Ok(Self {
            space: Space::Joint(space),
            amplitudes: v,
        })
    }

    /// Equal-weight superposition of the first `levels` number states.
    pub fn uniform_superposition(dim: usize, levels: usize) -> Result<Self> {
        if levels == 0 || levels > dim {
            return Err(Error::param("levels", format!("need 1..={dim}, got {levels}")));
        }
        let v = CVector::from_fn(dim, |n, _| if n < levels { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        Self::from_amplitudes(Space::Mode(dim), v)
    }

    /// `|ψ_a⟩ ⊗ |ψ_b⟩` in the documented joint ordering.
    pub fn product(lc: &StateVector, mech: &StateVector) -> Result<Self> {
        let (Space::Mode(da), Space::Mode(db)) = (lc.space, mech.space) else {
            return Err(Error::param("product", "both factors must be single-mode states"));
        };
        let space = FockSpace::new(da, db)?;
        let v = CVector::from_fn(space.dim(), |i, _| {
            let (na, nb) = space.levels(i);
            lc.amplitudes[na] * mech.amplitudes[nb]
        });
        Self::from_normalized(Space::Joint(space), v)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn joint_space(&self) -> Option<FockSpace> {
        match self.space {
            Space::Joint(s) => Some(s),
            Space::Mode(_) => None,
        }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn amplitude(&self, i: usize) -> Complex64 {
        self.amplitudes[i]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.space.ensure_same(&other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn with_global_phase(&self, theta: f64) -> Self {
        Self {
            space: self.space,
            amplitudes: &self.amplitudes * Complex64::from_polar(1.0, theta),
        }
    }

    pub(crate) fn check_norm(&self) -> Result<()> {
        let norm = self.amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::param("state", format!("norm {norm} deviates from 1")));
        }
        Ok(())
    }

    /// Populations of the highest retained level of each mode, `(A, B)`.
    /// For a single-mode state both entries are that mode's tail.
    pub fn tail_populations(&self) -> (f64, f64) {
        match self.space {
            Space::Mode(d) => {
                let t = self.amplitudes[d - 1].norm_sqr();
                (t, t)
            }
            Space::Joint(s) => {
                let mut tail_a = 0.0;
                let mut tail_b = 0.0;
                for (i, z) in self.amplitudes.iter().enumerate() {
                    let (na, nb) = s.levels(i);
                    if na + 1 == s.dim_a {
                        tail_a += z.norm_sqr();
                    }
                    if nb + 1 == s.dim_b {
                        tail_b += z.norm_sqr();
                    }
                }
                (tail_a, tail_b)
            }
        }
    }

    pub fn check_tail(&self, guard: &TailGuard) -> Result<()> {
        let (ta, tb) = self.tail_populations();
        if guard.check_a && ta > guard.tol {
            return Err(Error::Truncation { mode: Mode::A, tail: ta, tol: guard.tol });
        }
        if guard.check_b && tb > guard.tol {
            return Err(Error::Truncation { mode: Mode::B, tail: tb, tol: guard.tol });
        }
        Ok(())
    }

    /// Reduced density matrix of one mode of a joint state.
    pub fn reduced_density(&self, mode: Mode) -> Result<CMatrix> {
        let s = self
            .joint_space()
            .ok_or_else(|| Error::param("reduced_density", "state is not a joint state"))?;
        let d = s.mode_dim(mode);
        let mut rho = CMatrix::zeros(d, d);
        match mode {
            Mode::A => {
                for i in 0..s.dim_a {
                    for j in 0..s.dim_a {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for nb in 0..s.dim_b {
                            acc += self.amplitudes[s.index(i, nb)] * self.amplitudes[s.index(j, nb)].conj();
                        }
                        rho[(i, j)] = acc;
                    }
                }
            }
            Mode::B => {
                for i in 0..s.dim_b {
                    for j in 0..s.dim_b {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for na in 0..s.dim_a {
                            acc += self.amplitudes[s.index(na, i)] * self.amplitudes[s.index(na, j)].conj();
                        }
                        rho[(i, j)] = acc;
                    }
                }
            }
        }
        Ok(rho)
    }

    /// Von Neumann entropy (nats) of one mode's reduced state.
    pub fn entanglement_entropy(&self) -> Result<f64> {
        let rho = self.reduced_density(Mode::A)?;
        let eig = nalgebra::SymmetricEigen::new(rho);
        Ok(eig
            .eigenvalues
            .iter()
            .filter(|&&p| p > 1e-300)
            .map(|&p| -p * p.ln())
            .sum())
    }
}

/// Pure-state fidelity `|⟨ψ|φ⟩|`, clamped into `[0, 1]`.
pub fn fidelity(psi: &StateVector, phi: &StateVector) -> Result<f64> {
    Ok(psi.inner(phi)?.norm().min(1.0))
}

/// `√⟨φ|ρ|φ⟩`: fidelity of a density matrix against a pure target.
pub fn fidelity_with_density(rho: &CMatrix, phi: &StateVector) -> Result<f64> {
    let v = phi.amplitudes();
    if rho.nrows() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: rho.nrows(),
        });
    }
    let overlap = v.dotc(&(rho * v)).re;
    Ok(overlap.max(0.0).sqrt().min(1.0))
}

/// Coherent state on a truncated mode with the default tail tolerance.
pub fn coherent_state(alpha: Complex64, dim: usize) -> Result<StateVector> {
    coherent_state_with_tol(alpha, dim, DEFAULT_TAIL_TOL)
}

/// Amplitudes `∝ αⁿ/√n!`, renormalized on the retained levels.
pub fn coherent_state_with_tol(alpha: Complex64, dim: usize, tail_tol: f64) -> Result<StateVector> {
    if dim == 0 {
        return Err(Error::InvalidDimension { dim, min: 1 });
    }
    let mut v = CVector::zeros(dim);
    v[0] = Complex64::new(1.0, 0.0);
    for n in 1..dim {
        v[n] = v[n - 1] * alpha / (n as f64).sqrt();
    }
    let state = StateVector::from_amplitudes(Space::Mode(dim), v)?;
    let tail = state.amplitudes[dim - 1].norm_sqr();
    if dim > 1 && tail > tail_tol {
        return Err(Error::Truncation { mode: Mode::A, tail, tol: tail_tol });
    }
    Ok(state)
}

/// `(|α⟩ − i|−α⟩)/√2`, normalized numerically on the retained levels.
pub fn cat_state(alpha: Complex64, dim: usize) -> Result<StateVector> {
    cat_state_with_tol(alpha, dim, DEFAULT_TAIL_TOL)
}

pub fn cat_state_with_tol(alpha: Complex64, dim: usize, tail_tol: f64) -> Result<StateVector> {
    let plus = coherent_state_with_tol(alpha, dim, tail_tol)?;
    let minus = coherent_state_with_tol(-alpha, dim, tail_tol)?;
    let v = plus.amplitudes - minus.amplitudes * Complex64::new(0.0, 1.0);
    StateVector::from_amplitudes(Space::Mode(dim), v)
}
