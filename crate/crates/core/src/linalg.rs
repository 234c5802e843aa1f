//! Spectral exponentials of Hermitian generators.
//!
//! Every propagator in the crate is `exp(-i H t)` for some Hermitian `H`.
//! Computing it from an eigendecomposition keeps the result unitary to
//! rounding, which scaling-and-squaring schemes do not guarantee.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `exp(-i H t)` for a Hermitian complex matrix.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors;
    let mut vd = v.clone();
    for (j, mut col) in vd.column_iter_mut().enumerate() {
        col *= Complex64::from_polar(1.0, -eig.eigenvalues[j] * t);
    }
    vd * v.adjoint()
}

/// Eigendecomposition of a real symmetric matrix, reused for several
/// exponentials and their parameter derivatives.
#[derive(Debug, Clone)]
pub struct RealSpectrum {
    pub values: DVector<f64>,
    pub vectors: RMatrix,
}

impl RealSpectrum {
    pub fn new(h: RMatrix) -> Self {
        let eig = SymmetricEigen::new(h);
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Diagonal phases `exp(-i λ_j t)`.
    pub fn phases(&self, t: f64) -> CVector {
        self.values.map(|l| Complex64::from_polar(1.0, -l * t))
    }

    /// The dense propagator `V diag(exp(-iλt)) Vᵀ`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let phases = self.phases(t);
        let v = self.vectors.map(Complex64::from);
        let mut vd = v.clone();
        for (j, mut col) in vd.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        vd * v.transpose()
    }

    /// Rotate into the eigenbasis: `Vᵀ x`.
    pub fn to_eigenbasis(&self, x: &[Complex64]) -> CVector {
        let d = self.dim();
        let mut out = CVector::zeros(d);
        for j in 0..d {
            let col = self.vectors.column(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, xk) in x.iter().enumerate() {
                acc += *xk * col[k];
            }
            out[j] = acc;
        }
        out
    }

    /// Back from the eigenbasis: `V y`, written into `out`.
    pub fn from_eigenbasis(&self, y: &CVector, out: &mut [Complex64]) {
        let d = self.dim();
        for o in out.iter_mut() {
            *o = Complex64::new(0.0, 0.0);
        }
        for j in 0..d {
            let yj = y[j];
            let col = self.vectors.column(j);
            for (k, o) in out.iter_mut().enumerate() {
                *o += yj * col[k];
            }
        }
    }

    /// Apply `exp(-i H t)` to a vector in place.
    pub fn apply(&self, t: f64, x: &mut [Complex64]) {
        let mut y = self.to_eigenbasis(x);
        for (yj, l) in y.iter_mut().zip(self.values.iter()) {
            *yj *= Complex64::from_polar(1.0, -l * t);
        }
        self.from_eigenbasis(&y, x);
    }

    /// Divided differences of `f(λ) = exp(-iλt)`:
    /// `Φ_jk = (f(λ_j) − f(λ_k)) / (λ_j − λ_k)`, with `f'(λ_j)` on the diagonal.
    /// `d exp(-i H t)[G] = V (Φ ∘ VᵀGV) Vᵀ`.
    pub fn divided_differences(&self, t: f64) -> CMatrix {
        let d = self.dim();
        CMatrix::from_fn(d, d, |j, k| {
            let (lj, lk) = (self.values[j], self.values[k]);
            let half = 0.5 * (lj - lk) * t;
            let sinc = if half.abs() < 1e-8 {
                1.0 - half * half / 6.0
            } else {
                half.sin() / half
            };
            Complex64::from_polar(t * sinc, -0.5 * (lj + lk) * t - std::f64::consts::FRAC_PI_2)
        })
    }
}

/// Real symmetric tridiagonal matrix: `diag[k]` on the diagonal and
/// `off[k]` at `(k, k+1)` and `(k+1, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    fn mul_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let d = self.dim();
        for k in 0..d {
            let mut acc = x[k] * self.diag[k];
            if k > 0 {
                acc += x[k - 1] * self.off[k - 1];
            }
            if k + 1 < d {
                acc += x[k + 1] * self.off[k];
            }
            out[k] = acc;
        }
    }

    /// `max_k (|d_k| + |o_{k−1}| + |o_k|)`, a bound on the spectral radius.
    fn norm_bound(&self) -> f64 {
        (0..self.dim())
            .map(|k| {
                let left = if k > 0 { self.off[k - 1].abs() } else { 0.0 };
                let right = self.off.get(k).map_or(0.0, |o| o.abs());
                self.diag[k].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Apply `exp(-i H t)` to `x` in place by Lanczos projection.
    ///
    /// The Krylov space grows until the standard residual estimate drops
    /// below `tol · ‖x‖`; if that needs more than `MAX_KRYLOV` vectors the
    /// step is split in two. The estimate has a rounding floor near 1e−14,
    /// so tolerances below ~1e−13 only cost time.
    pub fn expm_apply(&self, t: f64, x: &mut [Complex64], tol: f64) {
        self.expm_apply_split(t, x, tol, 0);
        // amplitudes deep in the tail otherwise decay into subnormals,
        // which are very slow to compute with
        for z in x.iter_mut() {
            if z.re.abs() < 1e-200 {
                z.re = 0.0;
            }
            if z.im.abs() < 1e-200 {
                z.im = 0.0;
            }
        }
    }

    fn expm_apply_split(&self, t: f64, x: &mut [Complex64], tol: f64, depth: u32) {
        const MAX_KRYLOV: usize = 30;
        const MAX_SPLITS: u32 = 12;
        let budget = if depth >= MAX_SPLITS { self.dim() } else { MAX_KRYLOV };
        if !self.lanczos_step(t, x, if depth >= MAX_SPLITS { f64::INFINITY } else { tol }, budget) {
            self.expm_apply_split(0.5 * t, x, tol, depth + 1);
            self.expm_apply_split(0.5 * t, x, tol, depth + 1);
        }
    }

    fn lanczos_step(&self, t: f64, x: &mut [Complex64], tol: f64, max_m: usize) -> bool {
        let d = self.dim();
        let beta0 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if beta0 == 0.0 || t == 0.0 {
            return true;
        }
        // a step far beyond the Krylov budget is split without trying
        if self.norm_bound() * t.abs() > 0.6 * max_m as f64 {
            return false;
        }
        let max_m = max_m.min(d);
        let mut basis: Vec<Vec<Complex64>> = vec![x.iter().map(|z| z / beta0).collect()];
        let mut alpha = Vec::with_capacity(max_m);
        let mut beta: Vec<f64> = Vec::with_capacity(max_m);
        let mut w = vec![Complex64::new(0.0, 0.0); d];
        for j in 0..max_m {
            self.mul_into(&basis[j], &mut w);
            let a: f64 = basis[j].iter().zip(&w).map(|(q, v)| (q.conj() * v).re).sum();
            alpha.push(a);
            // full reorthogonalisation; the Krylov spaces here are small
            for q in &basis {
                let c: Complex64 = q.iter().zip(&w).map(|(qi, wi)| qi.conj() * wi).sum();
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
            let b = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let m = j + 1;
            let invariant = b <= 1e-14 * (a.abs() + beta.last().copied().unwrap_or(0.0) + 1.0);
            let check = invariant || m == max_m || m % 4 == 0;
            if check {
                let coeffs = small_expm_first_column(&alpha, &beta, t);
                let err = if invariant { 0.0 } else { b * coeffs[m - 1].norm() };
                if err <= tol {
                    for (k, xk) in x.iter_mut().enumerate() {
                        *xk = basis.iter().zip(&coeffs).map(|(q, c)| q[k] * c).sum::<Complex64>() * beta0;
                    }
                    return true;
                }
                if m == max_m {
                    return false;
                }
            }
            beta.push(b);
            basis.push(w.iter().map(|z| z / b).collect());
        }
        false
    }
}

/// First column of `exp(-i T t)` for the Lanczos matrix `T`.
fn small_expm_first_column(alpha: &[f64], beta: &[f64], t: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let tm = RMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(tm);
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| Complex64::from_polar(eig.eigenvectors[(i, k)] * eig.eigenvectors[(0, k)], -eig.eigenvalues[k] * t))
                .sum()
        })
        .collect()
}

/// `max_jk |A − B|`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `max_jk |U†U − I|`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let prod = u.adjoint() * u;
    let id = CMatrix::identity(u.nrows(), u.ncols());
    max_abs_diff(&prod, &id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hermitian(d: usize, seed: u64) -> CMatrix {
        // small LCG keeps this test free of rng plumbing
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = CMatrix::from_fn(d, d, |_, _| Complex64::new(next(), next()));
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn hermitian_exponential_is_unitary_and_matches_taylor() {
        let h = random_hermitian(6, 7);
        let u = expm_hermitian(&h, 0.3);
        assert!(unitarity_defect(&u) < 1e-13);

        // Taylor series oracle: small norm, 30 terms is exhaustive
        let gen = &h * Complex64::new(0.0, -0.3);
        let mut term = CMatrix::identity(6, 6);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &gen / Complex64::new(k as f64, 0.0);
            sum += &term;
        }
        assert!(max_abs_diff(&u, &sum) < 1e-12);
    }

    #[test]
    fn real_spectrum_apply_matches_dense() {
        let h = RMatrix::from_fn(5, 5, |i, j| ((i + 1) * (j + 1)) as f64 / 7.0 + if i == j { i as f64 } else { 0.0 });
        let spec = RealSpectrum::new(h.clone());
        let u = spec.propagator(1.7);
        let dense = expm_hermitian(&h.map(Complex64::from), 1.7);
        assert!(max_abs_diff(&u, &dense) < 1e-12);

        let mut x: Vec<Complex64> = (0..5).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let expect = &u * CVector::from_column_slice(&x);
        spec.apply(1.7, &mut x);
        for (a, b) in x.iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn divided_differences_give_frechet_derivative() {
        let h = RMatrix::from_fn(4, 4, |i, j| if i == j { i as f64 * 0.7 } else { 0.2 / (1.0 + (i + j) as f64) });
        let g = RMatrix::from_fn(4, 4, |i, j| if (i as i64 - j as i64).abs() == 1 { 1.0 } else { 0.0 });
        let t = 0.9;
        let spec = RealSpectrum::new(h.clone());
        let phi = spec.divided_differences(t);
        let gt = spec.vectors.transpose() * &g * &spec.vectors;
        let inner = CMatrix::from_fn(4, 4, |j, k| phi[(j, k)] * gt[(j, k)]);
        let v = spec.vectors.map(Complex64::from);
        let analytic = &v * inner * v.transpose();

        let eps = 1e-6;
        let up = RealSpectrum::new(&h + &g * eps).propagator(t);
        let dn = RealSpectrum::new(&h - &g * eps).propagator(t);
        let fd = (up - dn) / Complex64::new(2.0 * eps, 0.0);
        assert!(max_abs_diff(&analytic, &fd) < 1e-8);
    }
    #[test]
    fn lanczos_matches_spectral_exponential() {
        let d = 40;
        let tri = Tridiagonal {
            diag: (0..d).map(|k| 1.3 + 2.1 * k as f64).collect(),
            off: (0..d - 1).map(|k| 0.7 * ((k + 1) as f64).sqrt()).collect(),
        };
        let dense = RMatrix::from_fn(d, d, |i, j| {
            if i == j {
                tri.diag[i]
            } else if i + 1 == j {
                tri.off[i]
            } else if j + 1 == i {
                tri.off[j]
            } else {
                0.0
            }
        });
        let spec = RealSpectrum::new(dense);
        for t in [1e-3, 0.02, 0.5, 3.0] {
            let x0: Vec<Complex64> = (0..d).map(|k| Complex64::new((-(k as f64) / 4.0).exp(), 0.1 * k as f64 / d as f64)).collect();
            let mut a = x0.clone();
            let mut b = x0.clone();
            tri.expm_apply(t, &mut a, 1e-13);
            spec.apply(t, &mut b);
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-11, "t = {t}: {diff}");
        }
    }
}
