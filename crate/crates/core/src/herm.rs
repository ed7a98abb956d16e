//! Small Hermitian matrices (n = 1 or 2) used pointwise by the field code.
//!
//! Entries are stored in a fixed 2×2 array; for `n = 1` only `m[0][0]` is
//! meaningful and the rest stays zero.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Hermitian `n×n` matrix, `m[j][k] = g_{j k̄}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermMatrix {
    n: usize,
    m: [[Complex64; 2]; 2],
}

impl HermMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n == 1 || n == 2, "complex dimension must be 1 or 2");
        HermMatrix { n, m: [[ZERO; 2]; 2] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, lambda: f64) -> Self {
        let mut out = Self::zeros(n);
        for j in 0..n {
            out.m[j][j] = Complex64::new(lambda, 0.0);
        }
        out
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut out = Self::zeros(diag.len());
        for (j, &d) in diag.iter().enumerate() {
            out.m[j][j] = Complex64::new(d, 0.0);
        }
        out
    }

    /// For `n = 2`: `[[a, c], [c̄, b]]`.
    pub fn two(a: f64, b: f64, c: Complex64) -> Self {
        HermMatrix {
            n: 2,
            m: [[Complex64::new(a, 0.0), c], [c.conj(), Complex64::new(b, 0.0)]],
        }
    }

    /// Builds from arbitrary entries, Hermitian-symmetrizing them.
    pub fn from_entries(n: usize, entries: &[[Complex64; 2]; 2]) -> Self {
        let mut out = Self::zeros(n);
        for j in 0..n {
            for k in 0..n {
                out.m[j][k] = 0.5 * (entries[j][k] + entries[k][j].conj());
            }
        }
        out
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.m[j][k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, v: Complex64) {
        self.m[j][k] = v;
        if j != k {
            self.m[k][j] = v.conj();
        } else {
            self.m[j][j] = Complex64::new(v.re, 0.0);
        }
    }

    pub fn entries(&self) -> &[[Complex64; 2]; 2] {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|j| self.m[j][j].re).sum()
    }

    pub fn det(&self) -> f64 {
        match self.n {
            1 => self.m[0][0].re,
            _ => self.m[0][0].re * self.m[1][1].re - self.m[0][1].norm_sqr(),
        }
    }

    /// Eigenvalues in increasing order (second entry equals the first for `n = 1`).
    pub fn eigenvalues(&self) -> (f64, f64) {
        match self.n {
            1 => (self.m[0][0].re, self.m[0][0].re),
            _ => {
                let a = self.m[0][0].re;
                let b = self.m[1][1].re;
                let mean = 0.5 * (a + b);
                let radius = (0.25 * (a - b) * (a - b) + self.m[0][1].norm_sqr()).sqrt();
                let hi = mean + radius;
                let mut lo = mean - radius;
                // small eigenvalue from the determinant when the difference cancels
                if hi > 0.0 && lo.abs() < 0.25 * hi {
                    lo = self.det() / hi;
                }
                (lo, hi)
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().1
    }

    /// `log det`, as a sum of logs of eigenvalues. NaN unless positive definite.
    pub fn log_det(&self) -> f64 {
        match self.n {
            1 => self.m[0][0].re.ln(),
            _ => {
                let (lo, hi) = self.eigenvalues();
                if lo <= 0.0 {
                    f64::NAN
                } else {
                    lo.ln() + hi.ln()
                }
            }
        }
    }

    pub fn adjugate(&self) -> Self {
        match self.n {
            1 => HermMatrix::identity(1),
            _ => {
                let mut out = Self::zeros(2);
                out.m[0][0] = self.m[1][1];
                out.m[1][1] = self.m[0][0];
                out.m[0][1] = -self.m[0][1];
                out.m[1][0] = -self.m[1][0];
                out
            }
        }
    }

    pub fn inverse(&self) -> Self {
        let det = self.det();
        let adj = self.adjugate();
        match self.n {
            1 => HermMatrix::scalar(1, 1.0 / self.m[0][0].re),
            _ => adj.scale(1.0 / det),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for e in row.iter_mut() {
                *e *= s;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let mut out = *self;
        for j in 0..2 {
            for k in 0..2 {
                out.m[j][k] += other.m[j][k];
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Ordinary matrix product (not Hermitian in general, returned as raw entries).
    pub fn matmul(&self, other: &Self) -> [[Complex64; 2]; 2] {
        let mut out = [[ZERO; 2]; 2];
        for j in 0..self.n {
            for k in 0..self.n {
                for l in 0..self.n {
                    out[j][k] += self.m[j][l] * other.m[l][k];
                }
            }
        }
        out
    }

    /// `tr(A B)` for two Hermitian matrices; real.
    pub fn trace_product(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n {
            for k in 0..self.n {
                acc += (self.m[j][k] * other.m[k][j]).re;
            }
        }
        acc
    }

    /// `tr_self other = g^{j k̄} b_{j k̄} = tr(self⁻¹ other)`.
    pub fn trace_of(&self, other: &Self) -> f64 {
        self.inverse().trace_product(other)
    }

    /// Eigenvalues of `self⁻¹ other` (both Hermitian, `self` positive) in increasing order.
    pub fn relative_eigenvalues(&self, other: &Self) -> (f64, f64) {
        match self.n {
            1 => {
                let r = other.m[0][0].re / self.m[0][0].re;
                (r, r)
            }
            _ => {
                let tr = self.trace_of(other);
                let det = other.det() / self.det();
                let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                let hi = 0.5 * tr + disc;
                let lo = if hi > 0.0 && (0.5 * tr - disc).abs() < 0.25 * hi {
                    det / hi
                } else {
                    0.5 * tr - disc
                };
                (lo, hi)
            }
        }
    }

    /// Lower-triangular Cholesky factor `L` with `self = L L*`.
    pub fn cholesky(&self) -> Option<[[Complex64; 2]; 2]> {
        let mut l = [[ZERO; 2]; 2];
        let a = self.m[0][0].re;
        if a <= 0.0 {
            return None;
        }
        let l00 = a.sqrt();
        l[0][0] = Complex64::new(l00, 0.0);
        if self.n == 2 {
            let l10 = self.m[1][0] / l00;
            let rem = self.m[1][1].re - l10.norm_sqr();
            if rem <= 0.0 {
                return None;
            }
            l[1][0] = l10;
            l[1][1] = Complex64::new(rem.sqrt(), 0.0);
        }
        Some(l)
    }

    pub fn is_finite(&self) -> bool {
        self.m
            .iter()
            .flat_map(|r| r.iter())
            .all(|e| e.re.is_finite() && e.im.is_finite())
    }
}

/// Inverse of a lower-triangular 2×2 (or 1×1) matrix.
pub fn invert_lower(n: usize, l: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut t = [[ZERO; 2]; 2];
    t[0][0] = 1.0 / l[0][0];
    if n == 2 {
        t[1][1] = 1.0 / l[1][1];
        t[1][0] = -l[1][0] * t[0][0] * t[1][1];
    }
    t
}
