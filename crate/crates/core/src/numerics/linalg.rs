//! Small dense linear algebra: a fixed 2×2 type for random-effect covariances
//! and a row-major square matrix for information matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn new(m: [[f64; 2]; 2]) -> Self {
        Mat2(m)
    }

    pub fn zeros() -> Self {
        Mat2([[0.0; 2]; 2])
    }

    pub fn diag(d0: f64, d1: f64) -> Self {
        Mat2([[d0, 0.0], [0.0, d1]])
    }

    pub fn scale(&self, k: f64) -> Self {
        let m = self.0;
        Mat2([[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]])
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.0;
        (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs().max(m[1][0].abs()))
    }

    /// Lower Cholesky factor of a symmetric positive semi-definite matrix.
    pub fn cholesky_psd(&self) -> Result<[[f64; 2]; 2]> {
        let m = self.0;
        if !self.is_symmetric() || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Decomposition(format!(
                "matrix {m:?} is not finite symmetric"
            )));
        }
        let tol = 1e-12 * (1.0 + m[0][0].abs() + m[1][1].abs());
        if m[0][0] < -tol {
            return Err(Error::Decomposition(format!("negative pivot in {m:?}")));
        }
        let l00 = m[0][0].max(0.0).sqrt();
        let l10 = if l00 > 0.0 {
            m[1][0] / l00
        } else if m[1][0].abs() <= tol {
            0.0
        } else {
            return Err(Error::Decomposition(format!(
                "matrix {m:?} is not positive semi-definite"
            )));
        };
        let rem = m[1][1] - l10 * l10;
        if rem < -tol {
            return Err(Error::Decomposition(format!(
                "matrix {m:?} is not positive semi-definite"
            )));
        }
        Ok([[l00, 0.0], [l10, rem.max(0.0).sqrt()]])
    }

    /// Eigenvalues of a symmetric matrix in ascending order.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let m = self.0;
        let mean = 0.5 * (m[0][0] + m[1][1]);
        let half_diff = 0.5 * (m[0][0] - m[1][1]);
        let r = (half_diff * half_diff + m[0][1] * m[0][1]).sqrt();
        [mean - r, mean + r]
    }

    /// Clamp the eigenvalues of a symmetric matrix into `[lo, hi]`.
    pub fn clamp_eigenvalues(&self, lo: f64, hi: f64) -> Self {
        let m = self.0;
        let [l0, l1] = self.sym_eigenvalues();
        if l0 >= lo && l1 <= hi {
            return *self;
        }
        if m[0][1] == 0.0 {
            return Mat2::diag(m[0][0].clamp(lo, hi), m[1][1].clamp(lo, hi));
        }
        // Eigenvector of l1: (m01, l1 − m00), normalized.
        let (vx, vy) = (m[0][1], l1 - m[0][0]);
        let n = (vx * vx + vy * vy).sqrt();
        let (c, s) = (vx / n, vy / n);
        let (e0, e1) = (l0.clamp(lo, hi), l1.clamp(lo, hi));
        // V diag(e1, e0) Vᵀ with V = [[c, −s], [s, c]]
        Mat2([
            [e1 * c * c + e0 * s * s, (e1 - e0) * c * s],
            [(e1 - e0) * c * s, e1 * s * s + e0 * c * c],
        ])
    }

    /// Quadratic form xᵀ M⁻¹ x and ln det M for a positive-definite matrix.
    pub fn inv_quad_and_logdet(&self, x: [f64; 2]) -> Result<(f64, f64)> {
        let m = self.0;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det > 0.0 && m[0][0] > 0.0) {
            return Err(Error::Decomposition(format!(
                "matrix {m:?} is not positive definite"
            )));
        }
        let q = (m[1][1] * x[0] * x[0] - (m[0][1] + m[1][0]) * x[0] * x[1] + m[0][0] * x[1] * x[1])
            / det;
        Ok((q, det.ln()))
    }
}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("matrix rows must all have length n"));
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .take(self.n)
            .collect()
    }

    /// self += k · v vᵀ
    pub fn add_outer(&mut self, v: &[f64], k: f64) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let vi = v[i] * k;
            for j in 0..self.n {
                self.data[i * self.n + j] += vi * v[j];
            }
        }
    }

    /// self += k · other
    pub fn add_scaled(&mut self, other: &SquareMatrix, k: f64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Submatrix on the given index set (rows and columns).
    pub fn select(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let mut out = Self::zeros(k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Decomposition(format!(
                    "leading minor {j} is not positive"
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Solve self · x = b for symmetric positive-definite self.
    pub fn solve_spd(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = self.cholesky()?;
        Ok(l.cholesky_solve(b))
    }

    fn cholesky_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self[(i, k)] * y[k];
            }
            y[i] /= self[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self[(k, i)] * y[k];
            }
            y[i] /= self[(i, i)];
        }
        y
    }

    /// Inverse of a symmetric positive-definite matrix.
    pub fn inverse_spd(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let l = self.cholesky()?;
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = l.cholesky_solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // Symmetrize away round-off.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        Ok(inv)
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}
