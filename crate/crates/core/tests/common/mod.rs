#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use natfact::linalg::{DenseMatrix, SparseMatrix};
use natfact::mesh::Mesh;
use natfact::operators::NaturalFactors;
use natfact::randomfield::{build_kl, sample_field, CovarianceKernel};

pub fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

pub fn sparse_to_na(a: &SparseMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.rows(), a.cols());
    for (i, j, v) in a.triplets() {
        m[(i, j)] += v;
    }
    m
}

/// `[G_CR  C̃]` built from the factors directly.
pub fn dense_h(f: &NaturalFactors) -> DMatrix<f64> {
    let g = sparse_to_na(&f.g_cr);
    let c = sparse_to_na(&f.c_tilde);
    let mut h = DMatrix::zeros(g.nrows(), g.ncols() + c.ncols());
    h.view_mut((0, 0), g.shape()).copy_from(&g);
    h.view_mut((0, g.ncols()), c.shape()).copy_from(&c);
    h
}

/// `blockdiag(Gᵀ D G, C̃ᵀ D C̃)`.
pub fn dense_block(f: &NaturalFactors, d: &[f64]) -> DMatrix<f64> {
    let g = sparse_to_na(&f.g_cr);
    let c = sparse_to_na(&f.c_tilde);
    let dd = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    let a = g.transpose() * &dd * &g;
    let l = c.transpose() * &dd * &c;
    let n = a.nrows() + l.nrows();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), a.shape()).copy_from(&a);
    out.view_mut((a.nrows(), a.nrows()), l.shape()).copy_from(&l);
    out
}

/// Extreme eigenvalue ratio of `M⁻¹ Â` with `M = Hᵀ D H`, through a
/// Cholesky factor of `M`.
pub fn exact_condition(f: &NaturalFactors, d: &[f64]) -> f64 {
    let h = dense_h(f);
    let dd = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    let m = h.transpose() * dd * &h;
    let l = m.cholesky().expect("M is positive definite").l();
    let a = dense_block(f, d);
    let linv = l.clone().try_inverse().expect("triangular factor invertible");
    let s = &linv * a * linv.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let ev = s.symmetric_eigenvalues();
    ev.max() / ev.min()
}

/// Log-normal fields from a Matérn expansion, `count` seeds.
pub fn lognormal_fields(mesh: &Mesh, count: usize, seed0: u64) -> Vec<Vec<f64>> {
    let kernel = CovarianceKernel::matern(0.5, 0.5).unwrap();
    let k = mesh.num_triangles().min(20);
    let kl = build_kl(mesh, &kernel, k).unwrap();
    (0..count as u64).map(|s| sample_field(&kl, seed0 + s).kappa_per_triangle).collect()
}

/// Gradients of the barycentric coordinates from the inverse of the affine
/// interpolation matrix.
pub fn lambda_gradients(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let a = Matrix3::new(1.0, p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1]);
    let inv = a.try_inverse().expect("nondegenerate triangle");
    let area = 0.5 * a.determinant().abs();
    let g = |k: usize| {
        let c: Vector3<f64> = inv.column(k).into();
        [c[1], c[2]]
    };
    ([g(0), g(1), g(2)], area)
}

/// CR stiffness by element loop: `Σ_T κ_T |T| ∇ψ_i · ∇ψ_j` with `ψ = 1 - 2λ`.
pub fn element_stiffness_oracle(mesh: &Mesh, kappa: &[f64]) -> DMatrix<f64> {
    let ne = mesh.num_interior_edges();
    let mut a = DMatrix::zeros(ne, ne);
    for (t, &k) in kappa.iter().enumerate() {
        let (g, area) = lambda_gradients(mesh.triangle_points(t));
        let edges = mesh.triangle_edges(t);
        for (i, &ei) in edges.iter().enumerate() {
            let Some(r) = mesh.interior_edge_index(ei) else { continue };
            for (j, &ej) in edges.iter().enumerate() {
                let Some(c) = mesh.interior_edge_index(ej) else { continue };
                a[(r, c)] += k * area * 4.0 * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    a
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_01(order: usize) -> Vec<(f64, f64)> {
    let n = order;
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    (0..n).map(|i| (0.5 * (eig.eigenvalues[i] + 1.0), eig.eigenvectors[(0, i)].powi(2))).collect()
}

/// Broken H¹ seminorm error on a mesh via a collapsed Gauss product rule.
pub fn broken_h1_error_oracle(mesh: &Mesh, u: &[f64], grad: impl Fn(f64, f64) -> [f64; 2]) -> f64 {
    let rule = gauss_legendre_01(8);
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let (g, area) = lambda_gradients(p);
        let edges = mesh.triangle_edges(t);
        let mut gh = [0.0; 2];
        for k in 0..3 {
            if let Some(dof) = mesh.interior_edge_index(edges[k]) {
                gh[0] -= 2.0 * u[dof] * g[k][0];
                gh[1] -= 2.0 * u[dof] * g[k][1];
            }
        }
        // (s, r) in the unit square mapped to the reference triangle (s, r (1 - s)).
        for &(s, ws) in &rule {
            for &(r, wr) in &rule {
                let (a, b) = (s, r * (1.0 - s));
                let w = ws * wr * (1.0 - s) * 2.0 * area;
                let x = p[0][0] + a * (p[1][0] - p[0][0]) + b * (p[2][0] - p[0][0]);
                let y = p[0][1] + a * (p[1][1] - p[0][1]) + b * (p[2][1] - p[0][1]);
                let ge = grad(x, y);
                total += w * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
            }
        }
    }
    total.sqrt()
}
