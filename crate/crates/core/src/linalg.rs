//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! The step matrix of the recurrent cell is factorized once per step and the
//! factorization is reused by the reverse pass for transposed solves, which
//! `nalgebra`'s LU does not offer. Hence the hand-rolled [`Lu`].

use std::cell::Cell;

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of LU factorizations performed on the current thread so far.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(Cell::get)
}

/// Pivots smaller than this fraction of the largest matrix entry are
/// treated as zero.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// LU factorization with partial (row) pivoting: `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    packed: DMatrix<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
}

impl Lu {
    /// Factorizes `a`. Returns `None` when a pivot falls below
    /// [`SINGULAR_PIVOT_RATIO`] times the largest absolute entry.
    pub fn factor(mut a: DMatrix<f64>) -> Option<Self> {
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU of a non-square matrix");
        let scale = a.amax();
        let tol = SINGULAR_PIVOT_RATIO * scale.max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut piv = k;
            let mut best = a[(k, k)].abs();
            for i in k + 1..n {
                let v = a[(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if !(best > tol) {
                return None;
            }
            min_pivot = min_pivot.min(best);
            if piv != k {
                a.swap_rows(k, piv);
                perm.swap(k, piv);
            }
            let pivot = a[(k, k)];
            // Column-major storage: column j is data[j*n..(j+1)*n].
            let data = a.as_mut_slice();
            let (head, tail) = data.split_at_mut((k + 1) * n);
            let col_k = &mut head[k * n..];
            for v in &mut col_k[k + 1..] {
                *v /= pivot;
            }
            let col_k = &col_k[k + 1..];
            for col_j in tail.chunks_exact_mut(n) {
                let akj = col_j[k];
                if akj == 0.0 {
                    continue;
                }
                for (x, &l) in col_j[k + 1..].iter_mut().zip(col_k) {
                    *x -= l * akj;
                }
            }
        }
        Some(Self {
            packed: a,
            perm,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Smallest absolute pivot encountered.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let a = &self.packed;
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for i in j + 1..n {
                    x[i] -= a[(i, j)] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= a[(j, j)];
            let xj = x[j];
            for i in 0..j {
                x[i] -= a[(i, j)] * xj;
            }
        }
        x
    }

    /// Solves `Aᵀ·x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let a = &self.packed;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ w = b, Lᵀ v = w, x = Pᵀ v.
        let mut w = b.clone();
        for i in 0..n {
            let mut s = w[i];
            for k in 0..i {
                s -= a[(k, i)] * w[k];
            }
            w[i] = s / a[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in i + 1..n {
                s -= a[(k, i)] * w[k];
            }
            w[i] = s;
        }
        let mut x = DVector::zeros(n);
        for (i, &pi) in self.perm.iter().enumerate() {
            x[pi] = w[i];
        }
        x
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite matrix entries".into()));
    }
    // Deflating at exactly machine epsilon can stall on clusters of
    // eigenvalues (many unit eigenvalues from a force's kernel); a slightly
    // looser test costs at most that much relative accuracy.
    let schur = [f64::EPSILON, 4.0 * f64::EPSILON, 1e-14, 1e-12]
        .into_iter()
        .find_map(|eps| Schur::try_new(a.clone(), eps, 10_000))
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn solves_match_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 5, 17] {
            let a = random_matrix(n, &mut rng) + DMatrix::identity(n, n) * 0.5;
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let lu = Lu::factor(a.clone()).unwrap();
            let x = lu.solve(&b);
            assert!((&a * &x - &b).amax() < 1e-12);
            let y = lu.solve_transpose(&b);
            assert!((a.transpose() * &y - &b).amax() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Lu::factor(a).is_none());
        assert!(Lu::factor(DMatrix::zeros(3, 3)).is_none());
    }

    #[test]
    fn factorizations_are_counted() {
        let before = factorization_count();
        let _ = Lu::factor(DMatrix::identity(3, 3));
        let _ = Lu::factor(DMatrix::identity(2, 2));
        assert_eq!(factorization_count() - before, 2);
    }

    #[test]
    fn rotation_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let mut ev = eigenvalues(&a).unwrap();
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }
}
