//! Dense complex linear algebra: products, Hermitian transpose, LU-based
//! inversion with partial pivoting, and the left pseudo-inverse used by the
//! baseline beamformers.
//!
//! Matrices are row-major, double precision, and small (at most a few dozen
//! rows), so plain loops beat anything blocked or tiled here.

use crate::{Error, Result};
use num_complex::Complex64;

/// Complex scalar used throughout the crate.
pub type Complex = Complex64;

/// Relative pivot tolerance for declaring a matrix singular: a pivot counts
/// as zero when its magnitude falls below `SINGULARITY_RTOL * max row norm`.
pub const SINGULARITY_RTOL: f64 = 1e-12;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex>,
}

impl ComplexMatrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(1.0, 0.0);
        }
        m
    }

    /// Build from row-major data. Rejects length mismatches and non-finite
    /// entries; NaN/Inf never enter a matrix through this constructor.
    pub fn from_data(rows: usize, cols: usize, data: Vec<Complex>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        // i-k-j order keeps both operand sweeps contiguous.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Inverse of a square matrix via partially pivoted LU factorization.
    pub fn lu_inverse(&self) -> Result<ComplexMatrix> {
        if self.rows != self.cols {
            return Err(Error::Shape(format!(
                "inverse of non-square {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        if n == 0 {
            return Ok(ComplexMatrix::zeros(0, 0));
        }

        let max_row_norm = (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0_f64, f64::max);
        let tol = SINGULARITY_RTOL * max_row_norm;

        // In-place LU with a row permutation vector.
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot_row, pivot_mag) = (col..n)
                .map(|r| (r, lu[r * n + col].norm()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty pivot range");
            if pivot_mag <= tol {
                return Err(Error::Singular(format!(
                    "pivot {pivot_mag:.3e} below tolerance {tol:.3e} at column {col}"
                )));
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for r in (col + 1)..n {
                let factor = lu[r * n + col] / pivot;
                lu[r * n + col] = factor;
                for j in (col + 1)..n {
                    let sub = factor * lu[col * n + j];
                    lu[r * n + j] -= sub;
                }
            }
        }

        // Solve A x = e_k for every unit vector to assemble the inverse.
        let mut inv = ComplexMatrix::zeros(n, n);
        let mut x = vec![Complex::new(0.0, 0.0); n];
        for k in 0..n {
            for (i, slot) in x.iter_mut().enumerate() {
                *slot = if perm[i] == k {
                    Complex::new(1.0, 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            // Forward substitution with the unit lower factor.
            for i in 1..n {
                let mut acc = x[i];
                for j in 0..i {
                    acc -= lu[i * n + j] * x[j];
                }
                x[i] = acc;
            }
            // Back substitution with the upper factor.
            for i in (0..n).rev() {
                let mut acc = x[i];
                for j in (i + 1)..n {
                    acc -= lu[i * n + j] * x[j];
                }
                x[i] = acc / lu[i * n + i];
            }
            for i in 0..n {
                inv[(i, k)] = x[i];
            }
        }
        Ok(inv)
    }

    /// Left pseudo-inverse `(A^H A)^-1 A^H` of a full-column-rank matrix.
    pub fn left_pinv(&self) -> Result<ComplexMatrix> {
        if self.rows < self.cols {
            return Err(Error::Shape(format!(
                "left pseudo-inverse needs rows >= cols, got {}x{}",
                self.rows, self.cols
            )));
        }
        let ah = self.hermitian();
        let gram = ah.matmul(self)?;
        let gram_inv = gram.lu_inverse().map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!("rank-deficient matrix: {msg}")),
            other => other,
        })?;
        gram_inv.matmul(&ah)
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`; panics on shape mismatch.
    pub fn distance(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every entry by a complex factor.
    pub fn scaled(&self, factor: Complex) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex;
    fn index(&self, (i, j): (usize, usize)) -> &Complex {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex {
        &mut self.data[i * self.cols + j]
    }
}
