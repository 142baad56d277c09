//! Dense complex linear algebra for small (L <= 7) systems.
//!
//! The multi-frame filter only ever solves L x L Hermitian systems, so
//! hand-rolled Cholesky and partial-pivot elimination keep the numerics
//! transparent and dependency-free.

use num_complex::Complex;
use thiserror::Error;

use crate::scalar::{fr, Scalar};

/// Row-major square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    pub dim: usize,
    pub data: Vec<Complex<T>>,
}

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch")]
    DimensionMismatch,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex::new(T::zero(), T::zero()); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex<T>>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.dim).map(|i| self.at(i, i)).fold(Complex::new(T::zero(), T::zero()), |a, b| a + b)
    }

    /// Enforces A = (A + A^H)/2.
    pub fn hermitize(&mut self) {
        for i in 0..self.dim {
            for j in 0..=i {
                let a = self.at(i, j);
                let b = self.at(j, i);
                let half = fr::<T>(0.5);
                let sym = Complex::new((a.re + b.re) * half, (a.im - b.im) * half);
                self[(i, j)] = sym;
                self[(j, i)] = sym.conj();
            }
        }
    }

    /// Largest |A - A^H| entry, as a Hermitian-ness check.
    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let d = (self.at(i, j) - self.at(j, i).conj()).norm_sqr();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst.sqrt()
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = Complex::new(a.re * s, a.im * s);
        }
    }

    /// Adds `s` to the diagonal.
    pub fn add_diagonal(&mut self, s: T) {
        for i in 0..self.dim {
            let d = self.at(i, i);
            self[(i, i)] = Complex::new(d.re + s, d.im);
        }
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, xj) in x.iter().enumerate() {
                    acc += self.at(i, j) * xj;
                }
                acc
            })
            .collect()
    }

    /// Solves A x = b for Hermitian positive definite A via Cholesky.
    pub fn solve_hermitian(&self, b: &[Complex<T>]) -> Result<Vec<Complex<T>>, LinalgError> {
        if b.len() != self.dim {
            return Err(LinalgError::DimensionMismatch);
        }
        let n = self.dim;
        // A = L L^H with L lower triangular.
        let mut l = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.at(i, j);
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k].conj();
                }
                if i == j {
                    if sum.re <= T::zero() {
                        return Err(LinalgError::NotPositiveDefinite);
                    }
                    l[i * n + j] = Complex::new(sum.re.sqrt(), T::zero());
                } else {
                    l[i * n + j] = sum / l[j * n + j].re;
                }
            }
        }
        // Forward: L y = b.
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = l[i * n + k];
                let yk = y[k];
                y[i] -= lik * yk;
            }
            y[i] /= l[i * n + i].re;
        }
        // Backward: L^H x = y.
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = l[k * n + i].conj();
                let yk = y[k];
                y[i] -= lki * yk;
            }
            y[i] /= l[i * n + i].re;
        }
        Ok(y)
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.dim + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.dim + j]
    }
}

/// Conjugated inner product `a^H b`.
pub fn cdot<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.conj() * y)
        .fold(Complex::new(T::zero(), T::zero()), |acc, c| acc + c)
}

/// Outer-product accumulation: `m += w * (x x^H)`.
pub fn outer_accumulate<T: Scalar>(m: &mut CMat<T>, x: &[Complex<T>], w: T) {
    let n = m.dim;
    debug_assert_eq!(x.len(), n);
    for i in 0..n {
        for j in 0..n {
            let p = x[i] * x[j].conj();
            m.data[i * n + j] += Complex::new(p.re * w, p.im * w);
        }
    }
}

/// Solves a general complex system by Gaussian elimination with partial
/// pivoting. Used by test oracles (e.g. the KKT system of the
/// constrained filter problem); the production path uses Cholesky.
pub fn solve_general<T: Scalar>(
    a: &CMat<T>,
    b: &[Complex<T>],
) -> Result<Vec<Complex<T>>, LinalgError> {
    if b.len() != a.dim {
        return Err(LinalgError::DimensionMismatch);
    }
    let n = a.dim;
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        // Pivot on the largest magnitude in this column.
        let mut pivot = col;
        let mut best = m[col * n + col].norm_sqr();
        for row in col + 1..n {
            let mag = m[row * n + col].norm_sqr();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best == T::zero() || !best.is_finite() {
            return Err(LinalgError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            x.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / diag;
            if factor.re == T::zero() && factor.im == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[row * n + j] -= factor * v;
            }
            let xc = x[col];
            x[row] -= factor * xc;
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for j in row + 1..n {
            acc -= m[row * n + j] * x[j];
        }
        x[row] = acc / m[row * n + row];
    }
    Ok(x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex<f64>> {
        (0..n).map(|_| Complex::new(rng::normal(rng), rng::normal(rng))).collect()
    }

    pub(crate) fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> CMat<f64> {
        // G G^H + 0.1 I is Hermitian positive definite.
        let mut g = CMat::<f64>::zeros(n);
        for v in g.data.iter_mut() {
            *v = Complex::new(rng::normal(rng), rng::normal(rng));
        }
        let mut m = CMat::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for k in 0..n {
                    acc += g.at(i, k) * g.at(j, k).conj();
                }
                m[(i, j)] = acc;
            }
        }
        m.add_diagonal(0.1);
        m.hermitize();
        m
    }

    #[test]
    fn cholesky_solves_hpd_system() {
        let mut rng = rng::rng_from_seed(4);
        for n in [1usize, 3, 5, 7] {
            let a = random_hpd(&mut rng, n);
            let b = random_vec(&mut rng, n);
            let x = a.solve_hermitian(&b).unwrap();
            let ax = a.matvec(&x);
            for (u, v) in ax.iter().zip(b.iter()) {
                assert!((u - v).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn general_solve_matches_cholesky_on_hpd() {
        let mut rng = rng::rng_from_seed(5);
        for _ in 0..20 {
            let a = random_hpd(&mut rng, 5);
            let b = random_vec(&mut rng, 5);
            let x1 = a.solve_hermitian(&b).unwrap();
            let x2 = solve_general(&a, &b).unwrap();
            for (u, v) in x1.iter().zip(x2.iter()) {
                assert!((u - v).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = CMat::<f64>::identity(3);
        a[(1, 1)] = Complex::new(-2.0, 0.0);
        assert!(matches!(a.solve_hermitian(&[Complex::new(1.0, 0.0); 3]).unwrap_err(),
            LinalgError::NotPositiveDefinite));
    }

    #[test]
    fn hermitize_zeroes_the_defect() {
        let mut rng = rng::rng_from_seed(6);
        let mut a = CMat::<f64>::zeros(4);
        for v in a.data.iter_mut() {
            *v = Complex::new(rng::normal(&mut rng), rng::normal(&mut rng));
        }
        assert!(a.hermitian_defect() > 0.1);
        a.hermitize();
        assert!(a.hermitian_defect() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_detected() {
        let a = CMat::<f64>::zeros(3);
        assert!(matches!(
            solve_general(&a, &[Complex::new(1.0, 0.0); 3]).unwrap_err(),
            LinalgError::Singular
        ));
    }
}
