//! Small dense complex LU factorization with partial pivoting.
//!
//! The reduced network matrices are a dozen rows or so; a flat row-major
//! layout with an in-place solve keeps the per-iteration cost low.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Magnitude without the overflow guard of `hypot`.
#[inline]
pub fn cabs(c: Complex64) -> f64 {
    c.norm_sqr().sqrt()
}

#[derive(Debug, Clone)]
pub struct ComplexLu {
    n: usize,
    /// Row-major, L below the diagonal (unit diagonal implied), U on and above.
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    /// Factorizes `a`; returns `None` when a pivot vanishes.
    pub fn new(a: &DMatrix<Complex64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "square matrix required");
        let mut lu: Vec<Complex64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|r| (r, lu[r * n + k].norm_sqr()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(best > 0.0) || !best.is_finite() {
                return None;
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let inv = lu[k * n + k].inv();
            for r in k + 1..n {
                let m = lu[r * n + k] * inv;
                lu[r * n + k] = m;
                if m != Complex64::new(0.0, 0.0) {
                    for c in k + 1..n {
                        let u = lu[k * n + c];
                        lu[r * n + c] -= m * u;
                    }
                }
            }
        }
        Some(ComplexLu { n, lu, perm })
    }

    /// Solves `A x = b`, overwriting `b` with `x`. `scratch` must hold `n` entries.
    pub fn solve_in_place(&self, b: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.n;
        for (k, &p) in self.perm.iter().enumerate() {
            scratch[k] = b[p];
        }
        for r in 1..n {
            let row = &self.lu[r * n..r * n + r];
            let mut acc = scratch[r];
            for (c, l) in row.iter().enumerate() {
                acc -= l * scratch[c];
            }
            scratch[r] = acc;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n..(r + 1) * n];
            let mut acc = scratch[r];
            for c in r + 1..n {
                acc -= row[c] * scratch[c];
            }
            scratch[r] = acc / row[r];
        }
        b[..n].copy_from_slice(&scratch[..n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn needs_pivoting() {
        let a = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 1.0), c(2.0, 0.0), c(0.0, -1.0)]);
        let lu = ComplexLu::new(&a).unwrap();
        let mut b = vec![c(1.0, 0.0), c(0.0, 2.0)];
        let x_ref = a.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let mut s = vec![c(0.0, 0.0); 2];
        lu.solve_in_place(&mut b, &mut s);
        for k in 0..2 {
            assert!(cabs(b[k] - x_ref[k]) < 1e-14);
        }
    }

    #[test]
    fn singular_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(ComplexLu::new(&a).is_none());
    }

    proptest! {
        #[test]
        fn matches_residual(vals in proptest::collection::vec(-1.0f64..1.0, 2 * 36 + 12)) {
            let n = 6;
            let mut a = DMatrix::from_fn(n, n, |i, j| c(vals[2 * (i * n + j)], vals[2 * (i * n + j) + 1]));
            for k in 0..n {
                a[(k, k)] += c(4.0, -3.0);
            }
            let b: Vec<Complex64> = (0..n).map(|k| c(vals[72 + 2 * k], vals[73 + 2 * k])).collect();
            let lu = ComplexLu::new(&a).unwrap();
            let mut x = b.clone();
            let mut s = vec![c(0.0, 0.0); n];
            lu.solve_in_place(&mut x, &mut s);
            let r = &a * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
            prop_assert!(r.iter().all(|z| cabs(*z) < 1e-12));
        }
    }
}
