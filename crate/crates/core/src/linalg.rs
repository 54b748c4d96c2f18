//! Small dense Hermitian positive-definite solves used by the per-frequency
//! least-squares problems (FCP and WPE).

use num_complex::Complex64;

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix,
/// row-major `n x n`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Vec<Complex64>,
    n: usize,
}

impl Cholesky {
    /// Factors `a` (row-major, only the lower triangle is read) after adding
    /// `loading` to the diagonal. Returns `None` if a pivot is not positive.
    pub fn factor(a: &[Complex64], n: usize, loading: f64) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[j * n + j].re + loading;
            for p in 0..j {
                d -= l[j * n + p].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = Complex64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Some(Self { l, n })
    }

    /// Factors with the given relative loading, escalating it tenfold until
    /// the factorization succeeds.
    pub fn factor_loaded(a: &[Complex64], n: usize, rel_loading: f64) -> Self {
        let trace: f64 = (0..n).map(|i| a[i * n + i].re).sum::<f64>().abs();
        let base = if trace > 0.0 { trace / n as f64 } else { 1.0 };
        let mut loading = rel_loading * base;
        loop {
            if let Some(c) = Self::factor(a, n, loading) {
                return c;
            }
            loading = if loading > 0.0 { loading * 10.0 } else { 1e-12 * base };
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `(L L^H) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        let l = &self.l;
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= l[i * n + p] * b[p];
            }
            b[i] = s / l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= l[p * n + i].conj() * b[p];
            }
            b[i] = s / l[i * n + i].re;
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
