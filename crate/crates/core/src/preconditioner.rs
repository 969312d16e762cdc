//! The coefficient-independent preconditioner.
//!
//! `H = [G_CR  C̃_L]` is square (`2 N_T` on both sides) and nonsingular on a
//! simply connected mesh. It is factored once; for any coefficient diagonal
//! `D`, `M = Hᵀ D H` is then inverted as `H⁻¹ D⁻¹ H⁻ᵀ` with two triangular
//! solve pairs and a diagonal scaling.
//!
//! Before factoring, rows and columns of `H` are reordered by the lowest
//! mesh vertex they touch. That makes the matrix banded with half-bandwidths
//! `O(n)`, and the band-aware dense kernels then run in `O(N_T n²)`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{lu_factor_owned, qr_factor_owned, DenseMatrix, LuFactorization, QrFactorization, SparseMatrix};
use crate::mesh::Mesh;
use crate::operators::{apply_factored_into, CoefficientDiagonal, NaturalFactors};

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of `H` factorizations performed by the calling thread so far.
pub fn factorizations_on_current_thread() -> usize {
    FACTORIZATIONS.with(Cell::get)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMethod {
    #[default]
    Lu,
    Qr,
}

impl fmt::Display for FactorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorMethod::Lu => "lu",
            FactorMethod::Qr => "qr",
        })
    }
}

impl FromStr for FactorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lu" => Ok(FactorMethod::Lu),
            "qr" => Ok(FactorMethod::Qr),
            other => Err(Error::Parse(format!("unknown factorization method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Factor {
    Lu(LuFactorization),
    Qr(QrFactorization),
}

#[derive(Clone, Debug)]
pub struct HFactorization {
    h: DenseMatrix,
    method: FactorMethod,
    factor: Factor,
    /// Position `i` of the factored matrix holds row `row_order[i]` of `H`.
    row_order: Vec<usize>,
    /// Position `j` of the factored matrix holds column `col_order[j]` of `H`.
    col_order: Vec<usize>,
    num_cr: usize,
    bandwidths: (usize, usize),
}

/// Dense `[G_CR  C̃_L]`.
pub fn assemble_h(factors: &NaturalFactors) -> Result<DenseMatrix> {
    let rows = factors.g_cr.rows();
    let cols = factors.num_cr() + factors.num_curl();
    if cols != rows {
        return Err(Error::NotSquare { rows, cols });
    }
    let mut h = DenseMatrix::zeros(rows, cols);
    let offset = factors.num_cr();
    for (i, j, v) in factors.g_cr.triplets() {
        h[(i, j)] = v;
    }
    for (i, j, v) in factors.c_tilde.triplets() {
        h[(i, offset + j)] = v;
    }
    Ok(h)
}

/// Row and column orders that make `H` banded: each row (triangle) and each
/// column (edge or vertex) is keyed by its lowest mesh vertex.
fn band_ordering(mesh: &Mesh, factors: &NaturalFactors) -> (Vec<usize>, Vec<usize>) {
    let nt = mesh.num_triangles();
    let mut rows: Vec<(usize, usize)> = (0..2 * nt)
        .map(|r| {
            let t = r % nt;
            (*mesh.triangles()[t].iter().min().unwrap(), r)
        })
        .collect();
    rows.sort_by_key(|&(key, r)| (key, r % nt, r));

    let ne = factors.num_cr();
    let mut cols: Vec<(usize, usize, usize)> =
        mesh.interior_edges().iter().enumerate().map(|(col, &e)| (mesh.edges()[e].vertices[0], 0, col)).collect();
    cols.extend((0..factors.num_curl()).map(|v| (v, 1, ne + v)));
    cols.sort_unstable();

    (rows.into_iter().map(|r| r.1).collect(), cols.into_iter().map(|c| c.2).collect())
}

/// Assembles `H` and factors it once.
pub fn build_h(mesh: &Mesh, factors: &NaturalFactors, method: FactorMethod) -> Result<HFactorization> {
    check_len(mesh.num_triangles(), factors.num_triangles())?;
    let h = assemble_h(factors)?;
    let (row_order, col_order) = band_ordering(mesh, factors);
    let permuted = DenseMatrix::from_fn(h.rows(), h.cols(), |i, j| h[(row_order[i], col_order[j])]);
    let bandwidths = permuted.bandwidths();
    let factor = match method {
        FactorMethod::Lu => Factor::Lu(lu_factor_owned(permuted)?),
        FactorMethod::Qr => Factor::Qr(qr_factor_owned(permuted)?),
    };
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    Ok(HFactorization { h, method, factor, row_order, col_order, num_cr: factors.num_cr(), bandwidths })
}

impl HFactorization {
    /// `2 N_T`.
    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    pub fn num_cr(&self) -> usize {
        self.num_cr
    }

    pub fn h(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn method(&self) -> FactorMethod {
        self.method
    }

    /// Half-bandwidths of the reordered `H` that was factored.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.bandwidths
    }

    fn solve_permuted(&self, b: &[f64], x: &mut [f64], transposed: bool) {
        match &self.factor {
            Factor::Lu(f) => f.solve_into(b, x, transposed),
            Factor::Qr(f) => {
                x.copy_from_slice(b);
                f.solve_in_place(x, transposed);
            }
        }
    }

    /// `H x = b`.
    pub fn solve_h(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), b.len())?;
        let pb: Vec<f64> = self.row_order.iter().map(|&r| b[r]).collect();
        let mut px = vec![0.0; b.len()];
        self.solve_permuted(&pb, &mut px, false);
        let mut x = vec![0.0; b.len()];
        for (j, &c) in self.col_order.iter().enumerate() {
            x[c] = px[j];
        }
        Ok(x)
    }

    /// `Hᵀ x = b`.
    pub fn solve_ht(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), b.len())?;
        let pb: Vec<f64> = self.col_order.iter().map(|&c| b[c]).collect();
        let mut px = vec![0.0; b.len()];
        self.solve_permuted(&pb, &mut px, true);
        let mut x = vec![0.0; b.len()];
        for (i, &r) in self.row_order.iter().enumerate() {
            x[r] = px[i];
        }
        Ok(x)
    }

    /// `M⁻¹ r = H⁻¹ D⁻¹ H⁻ᵀ r`.
    pub fn apply_minv(&self, d: &CoefficientDiagonal, r: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), r.len())?;
        check_len(self.dim(), d.len())?;
        let mut out = vec![0.0; r.len()];
        self.apply_minv_into(d, r, &mut out, &mut MinvWork::new(self.dim()));
        Ok(out)
    }

    /// Allocation-free `M⁻¹ r`.
    pub fn apply_minv_into(&self, d: &CoefficientDiagonal, r: &[f64], out: &mut [f64], work: &mut MinvWork) {
        let MinvWork { a, b, c } = work;
        for (aj, &col) in a.iter_mut().zip(&self.col_order) {
            *aj = r[col];
        }
        match &self.factor {
            Factor::Lu(f) => f.solve_with_work(a, b, c, true),
            Factor::Qr(f) => {
                b.copy_from_slice(a);
                f.solve_in_place(b, true);
            }
        }
        // b is H⁻ᵀ r in permuted row order; scale by D⁻¹ there.
        let diag = d.as_slice();
        for (bi, &row) in b.iter_mut().zip(&self.row_order) {
            *bi /= diag[row];
        }
        match &self.factor {
            Factor::Lu(f) => f.solve_with_work(b, a, c, false),
            Factor::Qr(f) => {
                a.copy_from_slice(b);
                f.solve_in_place(a, false);
            }
        }
        for (&aj, &col) in a.iter().zip(&self.col_order) {
            out[col] = aj;
        }
    }
}

/// Scratch vectors for [`HFactorization::apply_minv_into`].
#[derive(Clone, Debug)]
pub struct MinvWork {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl MinvWork {
    pub fn new(dim: usize) -> Self {
        Self { a: vec![0.0; dim], b: vec![0.0; dim], c: vec![0.0; dim] }
    }
}

pub fn apply_minv(f: &HFactorization, d: &CoefficientDiagonal, r: &[f64]) -> Result<Vec<f64>> {
    f.apply_minv(d, r)
}

/// `Â = blockdiag(G_CRᵀ D G_CR, C̃_Lᵀ D C̃_L)`, applied factor-wise.
#[derive(Clone, Copy, Debug)]
pub struct BlockOperator<'a> {
    pub g_cr: &'a SparseMatrix,
    pub c_tilde: &'a SparseMatrix,
    pub d: &'a CoefficientDiagonal,
}

impl<'a> BlockOperator<'a> {
    pub fn new(factors: &'a NaturalFactors, d: &'a CoefficientDiagonal) -> Result<Self> {
        check_len(factors.g_cr.rows(), d.len())?;
        Ok(Self { g_cr: &factors.g_cr, c_tilde: &factors.c_tilde, d })
    }

    pub fn dim(&self) -> usize {
        self.g_cr.cols() + self.c_tilde.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y, &mut vec![0.0; self.g_cr.rows()]);
        Ok(y)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64], work: &mut [f64]) {
        let ne = self.g_cr.cols();
        let d = self.d.as_slice();
        let (xu, xw) = x.split_at(ne);
        let (yu, yw) = y.split_at_mut(ne);
        apply_factored_into(self.g_cr, d, xu, yu, work);
        apply_factored_into(self.c_tilde, d, xw, yw, work);
    }
}

pub fn apply_block(op: &BlockOperator<'_>, x: &[f64]) -> Result<Vec<f64>> {
    op.apply(x)
}

/// Upper bound `2η - 1` on the condition number of `M⁻¹Â`.
pub fn condition_bound(d: &CoefficientDiagonal) -> f64 {
    2.0 * d.contrast() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lu_factor;
    use crate::mesh::build_mesh;

    fn setup(n: usize) -> (Mesh, NaturalFactors) {
        let m = build_mesh(n).unwrap();
        let f = NaturalFactors::new(&m);
        (m, f)
    }

    #[test]
    fn h_is_square_and_banded() {
        for n in [1, 2, 5, 12] {
            let (m, f) = setup(n);
            let hf = build_h(&m, &f, FactorMethod::Lu).unwrap();
            assert_eq!(hf.dim(), 2 * m.num_triangles());
            let (lo, up) = hf.bandwidths();
            assert!(lo <= 4 * (n + 2) && up <= 4 * (n + 2), "n={n}: {lo},{up}");
        }
    }

    #[test]
    fn solves_against_unpermuted_dense_lu() {
        let (m, f) = setup(3);
        let hf = build_h(&m, &f, FactorMethod::Lu).unwrap();
        let plain = lu_factor(hf.h()).unwrap();
        let b: Vec<f64> = (0..hf.dim()).map(|i| ((i * 37) % 11) as f64 - 4.0).collect();
        let x1 = hf.solve_h(&b).unwrap();
        let x2 = plain.solve(&b, false).unwrap();
        let y1 = hf.solve_ht(&b).unwrap();
        let y2 = plain.solve(&b, true).unwrap();
        for i in 0..b.len() {
            assert!((x1[i] - x2[i]).abs() < 1e-10 * (1.0 + x2[i].abs()));
            assert!((y1[i] - y2[i]).abs() < 1e-10 * (1.0 + y2[i].abs()));
        }
    }

    #[test]
    fn minv_scales_inversely_with_d() {
        let (m, f) = setup(3);
        let hf = build_h(&m, &f, FactorMethod::Lu).unwrap();
        let kappa: Vec<f64> = (0..m.num_triangles()).map(|t| 1.0 + (t % 5) as f64).collect();
        let d = CoefficientDiagonal::new(&kappa).unwrap();
        let d4 = d.scaled(4.0).unwrap();
        let r: Vec<f64> = (0..hf.dim()).map(|i| (i as f64).sin()).collect();
        let a = hf.apply_minv(&d, &r).unwrap();
        let b = hf.apply_minv(&d4, &r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x * 0.25, *y);
        }
    }

    #[test]
    fn block_operator_decouples() {
        let (m, f) = setup(3);
        let d = CoefficientDiagonal::constant(m.num_triangles(), 2.0).unwrap();
        let op = BlockOperator::new(&f, &d).unwrap();
        assert!(op.apply(&vec![0.0; op.dim()]).unwrap().iter().all(|&v| v == 0.0));
        let mut x = vec![0.0; op.dim()];
        x[..f.num_cr()].iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 + 1.0);
        let y = op.apply(&x).unwrap();
        assert!(y[f.num_cr()..].iter().all(|&v| v == 0.0));
        assert!(op.apply(&[1.0]).is_err());
    }

    #[test]
    fn bound_formula() {
        let d = CoefficientDiagonal::constant(4, 3.5).unwrap();
        assert_eq!(condition_bound(&d), 1.0);
        let d = CoefficientDiagonal::new(&[1.0, 10.0, 5.0]).unwrap();
        assert_eq!(condition_bound(&d), 19.0);
    }

    #[test]
    fn counter_increments_per_build() {
        let (m, f) = setup(2);
        let before = factorizations_on_current_thread();
        build_h(&m, &f, FactorMethod::Qr).unwrap();
        build_h(&m, &f, FactorMethod::Lu).unwrap();
        assert_eq!(factorizations_on_current_thread(), before + 2);
        assert_eq!("QR".parse::<FactorMethod>().unwrap(), FactorMethod::Qr);
        assert!("cholesky".parse::<FactorMethod>().is_err());
    }
}
