//! Symmetric eigensolvers.
//!
//! * [`symmetric_eigen`]: cyclic Jacobi on a dense matrix, all pairs.
//! * [`tridiagonal_eigen`]: implicit QL on a symmetric tridiagonal matrix.
//! * [`symmetric_eigen_top`]: Lanczos with full reorthogonalization for the
//!   `k` algebraically largest pairs of a large dense matrix.
//!
//! All return eigenvalues in descending order with eigenvectors as columns.

use crate::error::{Error, Result};
use crate::linalg::dense::{axpy, dot, norm2};
use crate::linalg::DenseMatrix;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored column-wise, orthonormal.
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    fn sorted_descending(values: Vec<f64>, vectors: DenseMatrix) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let sorted_vectors = DenseMatrix::from_fn(vectors.rows(), order.len(), |i, j| vectors[(i, order[j])]);
        Self { values: order.iter().map(|&k| values[k]).collect(), vectors: sorted_vectors }
    }
}

pub fn symmetric_eigen(a: &DenseMatrix) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.rows();
    // Work on the exactly symmetrized copy.
    let mut m = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let frob: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut converged = n <= 1 || frob == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence(sweep));
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() { 1.0f64.copysign(theta) / (theta.abs() + theta.hypot(1.0)) } else { 0.0 };
                if t == 0.0 {
                    // |apq| is negligible next to the diagonal gap.
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[(r, p)];
                    let arq = m[(r, q)];
                    let new_p = c * arp - s * arq;
                    let new_q = s * arp + c * arq;
                    m[(r, p)] = new_p;
                    m[(p, r)] = new_p;
                    m[(r, q)] = new_q;
                    m[(q, r)] = new_q;
                }
                for r in 0..n {
                    let row = v.row_mut(r);
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-15 * frob;
    }

    let values = (0..n).map(|i| m[(i, i)]).collect();
    Ok(SymmetricEigen::sorted_descending(values, v))
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and sub/super-diagonal `off` (`off.len() == diag.len() - 1`).
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<SymmetricEigen> {
    let n = diag.len();
    if n == 0 {
        return Ok(SymmetricEigen { values: Vec::new(), vectors: DenseMatrix::zeros(0, 0) });
    }
    if off.len() + 1 != n {
        return Err(Error::DimensionMismatch { expected: n - 1, found: off.len() });
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z = DenseMatrix::identity(n);

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence(iter));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let row = z.row_mut(k);
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(SymmetricEigen::sorted_descending(d, z))
}

/// Residual tolerance, relative to the largest Ritz value, for accepting a
/// Lanczos pair.
const LANCZOS_TOL: f64 = 1e-11;

/// The `k` largest eigenpairs of a symmetric matrix by Lanczos iteration
/// with full reorthogonalization.
///
/// The Krylov basis grows until every wanted Ritz pair has residual below
/// `1e-11 * |λ_max|`, falling back to the full space when needed.
pub fn symmetric_eigen_top(a: &DenseMatrix, k: usize) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    if k > n {
        return Err(Error::InvalidArgument(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    if k == 0 {
        return Ok(SymmetricEigen { values: Vec::new(), vectors: DenseMatrix::zeros(n, 0) });
    }

    let mut seed = 0x9e37_79b9_7f4a_7c15u64;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut next = start_vector(n, &mut seed, &basis).ok_or(Error::NoConvergence(0))?;
    let mut target = n.min((2 * k + 20).max(40));

    loop {
        while basis.len() < target {
            let q = next;
            let mut w = a.matvec(&q)?;
            let a_j = dot(&q, &w);
            axpy(-a_j, &q, &mut w);
            if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
                axpy(-b, prev, &mut w);
            }
            basis.push(q);
            alpha.push(a_j);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
            }
            let b_j = norm2(&w);
            let scale = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            if basis.len() == n {
                next = Vec::new();
                beta.push(0.0);
                break;
            }
            if b_j <= 1e-13 * scale {
                // Invariant subspace found; continue with a fresh direction.
                beta.push(0.0);
                next = start_vector(n, &mut seed, &basis).ok_or(Error::NoConvergence(basis.len()))?;
            } else {
                beta.push(b_j);
                w.iter_mut().for_each(|x| *x /= b_j);
                next = w;
            }
        }

        let m = basis.len();
        let ritz = tridiagonal_eigen(&alpha, &beta[..m - 1])?;
        let b_last = beta[m - 1];
        let lam_max = ritz.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let converged = (0..k.min(m)).all(|i| (b_last * ritz.vectors[(m - 1, i)]).abs() <= LANCZOS_TOL * lam_max);
        if (converged && m >= k) || m == n {
            let vectors =
                DenseMatrix::from_fn(n, k, |row, col| (0..m).map(|j| basis[j][row] * ritz.vectors[(j, col)]).sum());
            return Ok(SymmetricEigen { values: ritz.values[..k].to_vec(), vectors });
        }
        target = n.min(m + k.max(20));
    }
}

/// Deterministic pseudo-random unit vector orthogonal to `basis`.
fn start_vector(n: usize, state: &mut u64, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                // splitmix64
                *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
                let mut z = *state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
                z ^= z >> 31;
                (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        for _ in 0..2 {
            for b in basis {
                let c = dot(b, &v);
                axpy(-c, b, &mut v);
            }
        }
        let nv = norm2(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &DenseMatrix, e: &SymmetricEigen) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..e.values.len() {
            let v = e.vector(k);
            let av = a.matvec(&v).unwrap();
            for (x, y) in av.iter().zip(&v) {
                worst = worst.max((x - e.values[k] * y).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_is_sorted() {
        let e = symmetric_eigen(&DenseMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vector(0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn swap_matrix() {
        let a = DenseMatrix::from_row_major(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!((e.values[1] + 1.0).abs() < 1e-15);
        assert!(residual(&a, &e) < 1e-14);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let a = DenseMatrix::from_row_major(2, 2, vec![0.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(matches!(symmetric_eigen(&a), Err(Error::NotSymmetric(_))));
        assert!(matches!(symmetric_eigen_top(&a, 1), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn tridiagonal_matches_jacobi() {
        let diag = [2.0, -1.0, 4.0, 0.5, 3.0, 1.0];
        let off = [1.0, 0.3, -2.0, 0.7, 0.1];
        let t = tridiagonal_eigen(&diag, &off).unwrap();
        let dense = DenseMatrix::from_fn(6, 6, |i, j| {
            if i == j {
                diag[i]
            } else if i.abs_diff(j) == 1 {
                off[i.min(j)]
            } else {
                0.0
            }
        });
        let j = symmetric_eigen(&dense).unwrap();
        for (x, y) in t.values.iter().zip(&j.values) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(residual(&dense, &t) < 1e-13);
        assert_eq!(tridiagonal_eigen(&[5.0], &[]).unwrap().values, vec![5.0]);
    }

    #[test]
    fn lanczos_agrees_with_jacobi() {
        let n = 60;
        let a = DenseMatrix::from_fn(n, n, |i, j| {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            (-(x - y).abs() * 3.0).exp()
        });
        let full = symmetric_eigen(&a).unwrap();
        let top = symmetric_eigen_top(&a, 12).unwrap();
        for k in 0..12 {
            assert!((full.values[k] - top.values[k]).abs() < 1e-10 * full.values[0]);
        }
        assert!(residual(&a, &top) < 1e-9);
        assert_eq!(symmetric_eigen_top(&a, n).unwrap().values.len(), n);
        assert!(symmetric_eigen_top(&a, n + 1).is_err());
    }
}
