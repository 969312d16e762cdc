//! Householder QR of a square matrix.
//!
//! Like the LU factorization, reflectors and updates are confined to the
//! band implied by the input's nonzero pattern: reflector `k` spans rows
//! `k..=k+p` and `R` has upper half-bandwidth at most `p + q`.

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Debug)]
pub struct QrFactorization {
    n: usize,
    /// `R` in the upper triangle; reflector tails (unit head implied) below.
    qr: DenseMatrix,
    tau: Vec<f64>,
    /// One past the last row touched by reflector `k`.
    v_end: Vec<usize>,
    /// One past the last nonzero column of row `k` of `R`.
    r_end: Vec<usize>,
}

pub fn qr_factor(a: &DenseMatrix) -> Result<QrFactorization> {
    qr_factor_owned(a.clone())
}

pub fn qr_factor_owned(mut a: DenseMatrix) -> Result<QrFactorization> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    let (lower, upper) = a.bandwidths();
    let mut tau = vec![0.0; n];
    let mut v_end = vec![0; n];
    let data = a.as_mut_slice();
    let mut w = vec![0.0; n];

    for k in 0..n {
        let last_row = (k + lower).min(n - 1);
        let last_col = (k + lower + upper).min(n - 1);
        v_end[k] = last_row + 1;

        let x0 = data[k * n + k];
        let tail_sq: f64 = ((k + 1)..=last_row).map(|i| data[i * n + k].powi(2)).sum();
        let norm = (x0 * x0 + tail_sq).sqrt();
        if norm == 0.0 {
            return Err(Error::Singular(k));
        }
        if tail_sq == 0.0 {
            // Column already reduced; identity reflector.
            tau[k] = 0.0;
            continue;
        }
        let beta = -norm.copysign(x0);
        tau[k] = (beta - x0) / beta;
        let scale = 1.0 / (x0 - beta);
        for i in (k + 1)..=last_row {
            data[i * n + k] *= scale;
        }
        data[k * n + k] = beta;

        // w = vᵀ A[k..=last_row, k+1..=last_col], accumulated row by row.
        let cols = (k + 1)..=last_col;
        w[cols.clone()].copy_from_slice(&data[k * n + k + 1..k * n + last_col + 1]);
        for i in (k + 1)..=last_row {
            let vi = data[i * n + k];
            if vi != 0.0 {
                for j in cols.clone() {
                    w[j] += vi * data[i * n + j];
                }
            }
        }
        let t = tau[k];
        for j in cols.clone() {
            data[k * n + j] -= t * w[j];
        }
        for i in (k + 1)..=last_row {
            let vi = data[i * n + k];
            if vi != 0.0 {
                for j in cols.clone() {
                    data[i * n + j] -= t * vi * w[j];
                }
            }
        }
    }

    let r_end = (0..n)
        .map(|i| {
            let row = &data[i * n..(i + 1) * n];
            row[i..].iter().rposition(|&v| v != 0.0).map_or(i + 1, |p| i + p + 1)
        })
        .collect();

    Ok(QrFactorization { n, qr: a, tau, v_end, r_end })
}

/// Solves `A x = b`, or `Aᵀ x = b` when `transposed` is set.
pub fn qr_solve(f: &QrFactorization, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
    f.solve(b, transposed)
}

impl QrFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    fn reflect(&self, k: usize, x: &mut [f64]) {
        let t = self.tau[k];
        if t == 0.0 {
            return;
        }
        let n = self.n;
        let v = self.qr.as_slice();
        let mut s = x[k];
        for i in (k + 1)..self.v_end[k] {
            s += v[i * n + k] * x[i];
        }
        s *= t;
        x[k] -= s;
        for i in (k + 1)..self.v_end[k] {
            x[i] -= s * v[i * n + k];
        }
    }

    /// `x <- Qᵀ x`.
    pub fn apply_qt(&self, x: &mut [f64]) {
        for k in 0..self.n {
            self.reflect(k, x);
        }
    }

    /// `x <- Q x`.
    pub fn apply_q(&self, x: &mut [f64]) {
        for k in (0..self.n).rev() {
            self.reflect(k, x);
        }
    }

    pub fn r(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| if j >= i { self.qr[(i, j)] } else { 0.0 })
    }

    pub fn solve(&self, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
        check_len(self.n, b.len())?;
        let mut x = b.to_vec();
        self.solve_in_place(&mut x, transposed);
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64], transposed: bool) {
        debug_assert_eq!(x.len(), self.n);
        let n = self.n;
        if transposed {
            // Rᵀ y = b, then x = Q y.
            for i in 0..n {
                let row = self.qr.row(i);
                let yi = x[i] / row[i];
                x[i] = yi;
                if yi != 0.0 {
                    for j in (i + 1)..self.r_end[i] {
                        x[j] -= row[j] * yi;
                    }
                }
            }
            self.apply_q(x);
        } else {
            self.apply_qt(x);
            for i in (0..n).rev() {
                let row = self.qr.row(i);
                let s: f64 = ((i + 1)..self.r_end[i]).map(|j| row[j] * x[j]).sum();
                x[i] = (x[i] - s) / row[i];
            }
        }
    }
}
