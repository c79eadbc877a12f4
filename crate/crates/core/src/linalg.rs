//! Small dense linear algebra: 2x2 matrices for the decomposition model and
//! a pivoted Gaussian solver for the handful-of-regressors designs.

use serde::{Deserialize, Serialize};

/// A 2x2 real matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    /// Symmetric matrix [[a, b], [b, d]].
    pub fn sym(a: f64, b: f64, d: f64) -> Self {
        Mat2([[a, b], [b, d]])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2([[self.0[0][0], self.0[1][0]], [self.0[0][1], self.0[1][1]]])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// 1' M 1: the sum of all entries.
    pub fn sum_entries(&self) -> f64 {
        self.0.iter().flatten().sum()
    }

    pub fn add(&self, rhs: &Mat2) -> Mat2 {
        let mut out = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = self.0[i][j] + rhs.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, rhs: &Mat2) -> Mat2 {
        let mut out = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = self.0[i][j] - rhs.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Mat2 {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2([
            [self.0[1][1] / d, -self.0[0][1] / d],
            [-self.0[1][0] / d, self.0[0][0] / d],
        ]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Max abs asymmetry |M - M'| relative to the matrix scale.
    pub fn asymmetry(&self) -> f64 {
        (self.0[0][1] - self.0[1][0]).abs()
    }

    pub fn symmetrize(&self) -> Mat2 {
        let b = (self.0[0][1] + self.0[1][0]) / 2.0;
        Mat2::sym(self.0[0][0], b, self.0[1][1])
    }

    /// Eigenvalues of a symmetric matrix, ascending. The off-diagonal pair is
    /// averaged first so slightly asymmetric inputs do not produce NaN.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let s = self.symmetrize();
        let m = s.trace() / 2.0;
        let half_gap = (s.0[0][0] - s.0[1][1]) / 2.0;
        let r = (half_gap * half_gap + s.0[0][1] * s.0[0][1]).sqrt();
        [m - r, m + r]
    }

    /// Nearest positive-semidefinite matrix: symmetrize, clip eigenvalues to
    /// be >= 0, reconstruct.
    pub fn psd_project(&self) -> Mat2 {
        let s = self.symmetrize();
        let [lo, hi] = s.sym_eigenvalues();
        if lo >= 0.0 {
            return s;
        }
        let (c, sn) = rotation(&s);
        reconstruct(lo.max(0.0), hi.max(0.0), c, sn)
    }

    /// Symmetric PSD square root via the eigendecomposition. Negative
    /// eigenvalues (rounding noise) are clipped to zero.
    pub fn sqrt_psd(&self) -> Mat2 {
        let s = self.symmetrize();
        let [lo, hi] = s.sym_eigenvalues();
        let (c, sn) = rotation(&s);
        reconstruct(lo.max(0.0).sqrt(), hi.max(0.0).sqrt(), c, sn)
    }
}

/// (cos, sin) of the eigenvector rotation for a symmetric 2x2 matrix. The
/// returned basis diagonalizes the matrix with eigenvalues ordered [lo, hi].
fn rotation(s: &Mat2) -> (f64, f64) {
    let b = s.0[0][1];
    if b == 0.0 {
        // Already diagonal; order the basis by eigenvalue.
        return if s.0[0][0] <= s.0[1][1] {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
    }
    let half = 0.5 * (2.0 * b).atan2(s.0[0][0] - s.0[1][1]);
    // Columns of R = [[cos, -sin], [sin, cos]] are eigenvectors of (hi, lo);
    // swap roles so the first axis carries lo.
    let (c, sn) = (half.cos(), half.sin());
    (-sn, c)
}

/// R diag(lo, hi) R' with R the rotation whose first column is (c, s).
fn reconstruct(lo: f64, hi: f64, c: f64, s: f64) -> Mat2 {
    // First eigenvector (c, s) for lo, second (-s, c) for hi.
    Mat2([
        [lo * c * c + hi * s * s, (lo - hi) * c * s],
        [(lo - hi) * c * s, lo * s * s + hi * c * c],
    ])
}

/// Solve A x = b for a small square system with partial pivoting.
/// Returns None when the matrix is numerically singular.
#[allow(clippy::needless_range_loop)]
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    debug_assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Inverse of a small square matrix by Gauss-Jordan with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let p = m[col][col];
        for k in 0..n {
            m[col][k] /= p;
            inv[col][k] /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                m[row][k] -= f * m[col][k];
                inv[row][k] -= f * inv[col][k];
            }
        }
    }
    Some(inv)
}
