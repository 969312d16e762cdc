//! Dense and sparse linear algebra kernels.

pub mod dense;
pub mod eigen;
pub mod lu;
pub mod matrix_market;
pub mod qr;
pub mod sparse;

pub use dense::{dot, norm2, DenseMatrix};
pub use eigen::{symmetric_eigen, symmetric_eigen_top, tridiagonal_eigen, SymmetricEigen};
pub use lu::{lu_factor, lu_factor_owned, lu_solve, LuFactorization};
pub use qr::{qr_factor, qr_factor_owned, qr_solve, QrFactorization};
pub use sparse::SparseMatrix;

/// `y = A x` for a sparse matrix, checking dimensions.
pub fn sparse_matvec(a: &SparseMatrix, x: &[f64]) -> crate::Result<Vec<f64>> {
    a.matvec(x)
}
