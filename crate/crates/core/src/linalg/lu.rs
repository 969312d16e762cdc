//! LU factorization with partial pivoting.
//!
//! Factors are stored packed in a dense row-major buffer (`PA = LU`, unit
//! lower `L`). The elimination only visits the band that the input's
//! nonzero pattern can fill, so a matrix with half-bandwidths `(p, q)` costs
//! `O(n p (p + q))` instead of `O(n^3)`. A general dense matrix is simply the
//! case `p = q = n - 1`. Element growth is not monitored.

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Debug)]
pub struct LuFactorization {
    n: usize,
    lu: DenseMatrix,
    /// `perm[i]` is the original row now at position `i`.
    perm: Vec<usize>,
    /// First nonzero column of the strictly lower part of each row.
    l_start: Vec<usize>,
    /// One past the last nonzero column of the upper part of each row.
    u_end: Vec<usize>,
}

pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactorization> {
    lu_factor_owned(a.clone())
}

/// Factors `a` in place, reusing its storage for the packed factors.
pub fn lu_factor_owned(mut a: DenseMatrix) -> Result<LuFactorization> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    let (lower, upper) = a.bandwidths();
    let mut perm: Vec<usize> = (0..n).collect();
    let data = a.as_mut_slice();

    for k in 0..n {
        let last_row = (k + lower).min(n - 1);
        let last_col = (k + lower + upper).min(n - 1);

        let mut p = k;
        let mut best = data[k * n + k].abs();
        for i in (k + 1)..=last_row {
            let v = data[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular(k));
        }
        if p != k {
            let (head, tail) = data.split_at_mut(p * n);
            head[k * n..(k + 1) * n].swap_with_slice(&mut tail[..n]);
            perm.swap(k, p);
        }

        let pivot = data[k * n + k];
        let (head, tail) = data.split_at_mut((k + 1) * n);
        let pivot_row = &head[k * n + k + 1..k * n + last_col + 1];
        for i in (k + 1)..=last_row {
            let row = &mut tail[(i - k - 1) * n..(i - k) * n];
            if row[k] == 0.0 {
                continue;
            }
            let m = row[k] / pivot;
            row[k] = m;
            for (x, &u) in row[k + 1..=last_col].iter_mut().zip(pivot_row) {
                *x -= m * u;
            }
        }
    }

    let mut l_start = vec![0; n];
    let mut u_end = vec![0; n];
    for i in 0..n {
        let row = &data[i * n..(i + 1) * n];
        l_start[i] = row[..i].iter().position(|&v| v != 0.0).unwrap_or(i);
        u_end[i] = row[i..].iter().rposition(|&v| v != 0.0).map_or(i + 1, |p| i + p + 1);
    }

    Ok(LuFactorization { n, lu: a, perm, l_start, u_end })
}

/// Solves `A x = b`, or `Aᵀ x = b` when `transposed` is set.
pub fn lu_solve(f: &LuFactorization, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
    f.solve(b, transposed)
}

impl LuFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn solve(&self, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
        check_len(self.n, b.len())?;
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x, transposed);
        Ok(x)
    }

    /// Solve into `x`; allocates one scratch vector for the transposed case.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64], transposed: bool) {
        let mut work = vec![0.0; if transposed { self.n } else { 0 }];
        self.solve_with_work(b, x, &mut work, transposed);
    }

    /// Allocation-free solve. `work` must have length `dim()` when
    /// `transposed` is set and is ignored otherwise.
    pub fn solve_with_work(&self, b: &[f64], x: &mut [f64], work: &mut [f64], transposed: bool) {
        debug_assert_eq!(b.len(), self.n);
        debug_assert_eq!(x.len(), self.n);
        if transposed {
            work.copy_from_slice(b);
            self.solve_transposed_in_place(work);
            for (i, &p) in self.perm.iter().enumerate() {
                x[p] = work[i];
            }
        } else {
            for (xi, &p) in x.iter_mut().zip(&self.perm) {
                *xi = b[p];
            }
            self.forward_backward_in_place(x);
        }
    }

    fn forward_backward_in_place(&self, y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = (self.l_start[i]..i).map(|j| row[j] * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = ((i + 1)..self.u_end[i]).map(|j| row[j] * y[j]).sum();
            y[i] = (y[i] - s) / row[i];
        }
    }

    /// `Uᵀ z = b` then `Lᵀ w = z`; `w` holds `b` on entry. The caller applies `Pᵀ`.
    fn solve_transposed_in_place(&self, w: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = self.lu.row(i);
            let zi = w[i] / row[i];
            w[i] = zi;
            if zi != 0.0 {
                for j in (i + 1)..self.u_end[i] {
                    w[j] -= row[j] * zi;
                }
            }
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let yi = w[i];
            if yi != 0.0 {
                for j in self.l_start[i]..i {
                    w[j] -= row[j] * yi;
                }
            }
        }
    }

    pub fn lower(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lu[(i, j)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    pub fn upper(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| if j >= i { self.lu[(i, j)] } else { 0.0 })
    }

    /// `PᵀLU`, which should reproduce the factored matrix.
    pub fn reconstruct(&self) -> DenseMatrix {
        let lu = self.lower().matmul(&self.upper()).expect("square factors");
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for (i, &p) in self.perm.iter().enumerate() {
            a.row_mut(p).copy_from_slice(lu.row(i));
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_trivially() {
        let f = lu_factor(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(f.permutation(), &[0, 1, 2, 3]);
        assert_eq!(f.lower(), DenseMatrix::identity(4));
        assert_eq!(f.upper(), DenseMatrix::identity(4));
        assert_eq!(f.solve(&[1.0, 2.0, 3.0, 4.0], false).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pure_permutation() {
        let a = DenseMatrix::from_row_major(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let f = lu_factor(&a).unwrap();
        assert_eq!(f.permutation(), &[1, 0]);
        assert_eq!(f.reconstruct(), a);
        assert_eq!(f.solve(&[3.0, 5.0], false).unwrap(), vec![5.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let f = lu_factor(&DenseMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        assert_eq!(f.solve(&[2.0, 4.0], false).unwrap(), vec![1.0, 1.0]);
        assert_eq!(f.solve(&[2.0, 4.0], true).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn singular_and_rectangular_rejected() {
        let a = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(lu_factor(&a), Err(Error::Singular(1))));
        assert!(matches!(lu_factor(&DenseMatrix::zeros(2, 3)), Err(Error::NotSquare { .. })));
        let f = lu_factor(&DenseMatrix::identity(2)).unwrap();
        assert!(f.solve(&[1.0], false).is_err());
    }

    #[test]
    fn banded_matrix_with_pivoting() {
        // Pentadiagonal with weak diagonal forces row swaps inside the band.
        let n = 12;
        let a = DenseMatrix::from_fn(n, n, |i, j| match i as i64 - j as i64 {
            0 => 0.1 + i as f64 * 0.01,
            1 | -1 => 1.0 + (i + j) as f64 * 0.1,
            2 => -2.0,
            -2 => 0.5,
            _ => 0.0,
        });
        let f = lu_factor(&a).unwrap();
        assert!(f.permutation().iter().enumerate().any(|(i, &p)| i != p));
        let r = f.reconstruct();
        for i in 0..n {
            for j in 0..n {
                assert!((r[(i, j)] - a[(i, j)]).abs() < 1e-13);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        for transposed in [false, true] {
            let x = f.solve(&b, transposed).unwrap();
            let ax = if transposed { a.matvec_transpose(&x) } else { a.matvec(&x) }.unwrap();
            for (u, v) in ax.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
