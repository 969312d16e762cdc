//! Natural factors of the Crouzeix–Raviart and P1 stiffness matrices.
//!
//! Every factor has `2 N_T` rows: row `t` carries the x-derivative on
//! triangle `t` and row `N_T + t` the y-derivative, both scaled by `√|T|`.
//! Gradients are piecewise constant, so one value per triangle is exact and
//! a stiffness matrix is `Gᵀ D G` with `D = diag(κ_T, κ_T)`.
//!
//! CR basis: the function attached to the edge opposite vertex `k` of a
//! triangle is `1 - 2 λ_k` there. Dirichlet edges and vertices get no column.

use crate::error::{check_len, Error, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::{Mesh, Point};

/// `(∇λ_0, ∇λ_1, ∇λ_2, |T|)` for a counter-clockwise triangle.
pub fn barycentric_gradients(p: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let inv = 1.0 / (2.0 * area);
    let grad = |k: usize| {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv]
    };
    ([grad(0), grad(1), grad(2)], area)
}

/// `G_CR`: `2 N_T x N_e`, columns indexed by interior edge.
pub fn assemble_gradient_cr(m: &Mesh) -> SparseMatrix {
    let nt = m.num_triangles();
    let mut triplets = Vec::with_capacity(12 * nt);
    for t in 0..nt {
        let (grads, area) = barycentric_gradients(m.triangle_points(t));
        let s = area.sqrt();
        for (k, &e) in m.triangle_edges(t).iter().enumerate() {
            if let Some(col) = m.interior_edge_index(e) {
                triplets.push((t, col, -2.0 * s * grads[k][0]));
                triplets.push((nt + t, col, -2.0 * s * grads[k][1]));
            }
        }
    }
    SparseMatrix::from_triplets(2 * nt, m.num_interior_edges(), &triplets).expect("indices in range")
}

/// Rotated P1 gradients `[∂₂φ_v; -∂₁φ_v]` over all `Ñ_v` vertices.
pub fn assemble_curl_p1_full(m: &Mesh) -> SparseMatrix {
    let nt = m.num_triangles();
    let mut triplets = Vec::with_capacity(6 * nt);
    for t in 0..nt {
        let (grads, area) = barycentric_gradients(m.triangle_points(t));
        let s = area.sqrt();
        for (k, &v) in m.triangles()[t].iter().enumerate() {
            triplets.push((t, v, s * grads[k][1]));
            triplets.push((nt + t, v, -s * grads[k][0]));
        }
    }
    SparseMatrix::from_triplets(2 * nt, m.num_vertices(), &triplets).expect("indices in range")
}

/// Vertex whose column is removed from the discrete curl.
///
/// Constants span the kernel of the curl on a connected mesh; dropping one
/// column (the top-right corner, the largest index) leaves full column rank.
pub fn dropped_curl_vertex(m: &Mesh) -> usize {
    m.num_vertices() - 1
}

/// `C̃_L`: `2 N_T x (Ñ_v - 1)`.
pub fn assemble_curl_p1(m: &Mesh) -> SparseMatrix {
    let dropped = dropped_curl_vertex(m);
    let full = assemble_curl_p1_full(m);
    let triplets: Vec<_> = full
        .triplets()
        .filter(|&(_, v, _)| v != dropped)
        .map(|(r, v, x)| (r, if v > dropped { v - 1 } else { v }, x))
        .collect();
    SparseMatrix::from_triplets(full.rows(), full.cols() - 1, &triplets).expect("indices in range")
}

/// `G_L`: `2 N_T x N_v`, columns indexed by interior vertex.
pub fn assemble_gradient_p1(m: &Mesh) -> SparseMatrix {
    let nt = m.num_triangles();
    let mut triplets = Vec::with_capacity(6 * nt);
    for t in 0..nt {
        let (grads, area) = barycentric_gradients(m.triangle_points(t));
        let s = area.sqrt();
        for (k, &v) in m.triangles()[t].iter().enumerate() {
            if let Some(col) = m.interior_vertex_index(v) {
                triplets.push((t, col, s * grads[k][0]));
                triplets.push((nt + t, col, s * grads[k][1]));
            }
        }
    }
    SparseMatrix::from_triplets(2 * nt, m.num_interior_vertices(), &triplets).expect("indices in range")
}

/// The coefficient-independent factors of one mesh.
#[derive(Clone, Debug)]
pub struct NaturalFactors {
    pub g_cr: SparseMatrix,
    pub c_tilde: SparseMatrix,
    pub g_l: SparseMatrix,
    num_triangles: usize,
}

impl NaturalFactors {
    pub fn new(m: &Mesh) -> Self {
        Self {
            g_cr: assemble_gradient_cr(m),
            c_tilde: assemble_curl_p1(m),
            g_l: assemble_gradient_p1(m),
            num_triangles: m.num_triangles(),
        }
    }

    /// Assembles from explicit matrices, e.g. for fault-injection checks.
    pub fn from_parts(g_cr: SparseMatrix, c_tilde: SparseMatrix, g_l: SparseMatrix) -> Result<Self> {
        check_len(g_cr.rows(), c_tilde.rows())?;
        check_len(g_cr.rows(), g_l.rows())?;
        if !g_cr.rows().is_multiple_of(2) {
            return Err(Error::InvalidArgument("factor row count must be even".into()));
        }
        Ok(Self { num_triangles: g_cr.rows() / 2, g_cr, c_tilde, g_l })
    }

    pub fn num_triangles(&self) -> usize {
        self.num_triangles
    }

    /// `N_e`, the CR block size.
    pub fn num_cr(&self) -> usize {
        self.g_cr.cols()
    }

    /// `Ñ_v - 1`, the curl block size.
    pub fn num_curl(&self) -> usize {
        self.c_tilde.cols()
    }
}

/// The diagonal `D(κ) = diag(κ_T, κ_T)` of length `2 N_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientDiagonal {
    d: Vec<f64>,
    contrast: f64,
}

impl CoefficientDiagonal {
    pub fn new(kappa_per_triangle: &[f64]) -> Result<Self> {
        if kappa_per_triangle.is_empty() {
            return Err(Error::InvalidArgument("empty coefficient field".into()));
        }
        if let Some((t, &k)) = kappa_per_triangle.iter().enumerate().find(|(_, k)| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "coefficient on triangle {t} must be positive and finite, got {k}"
            )));
        }
        let (lo, hi) = kappa_per_triangle.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &k| (lo.min(k), hi.max(k)));
        let mut d = Vec::with_capacity(2 * kappa_per_triangle.len());
        d.extend_from_slice(kappa_per_triangle);
        d.extend_from_slice(kappa_per_triangle);
        Ok(Self { d, contrast: hi / lo })
    }

    pub fn constant(num_triangles: usize, c: f64) -> Result<Self> {
        Self::new(&vec![c; num_triangles])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    /// `κ_T` per triangle (the first half of the diagonal).
    pub fn kappa(&self) -> &[f64] {
        &self.d[..self.d.len() / 2]
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// `η = max κ_T / min κ_T`.
    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.kappa().iter().map(|k| k * c).collect::<Vec<_>>())
    }
}

pub fn coefficient_diagonal(m: &Mesh, kappa_per_triangle: &[f64]) -> Result<CoefficientDiagonal> {
    check_len(m.num_triangles(), kappa_per_triangle.len())?;
    CoefficientDiagonal::new(kappa_per_triangle)
}

/// Explicit sparse `Gᵀ D G`.
///
/// Each entry is summed over rows in a fixed order with products formed as
/// `d_r (g_a g_b)`, so the result is exactly symmetric.
pub fn assemble_stiffness(g: &SparseMatrix, d: &CoefficientDiagonal) -> Result<SparseMatrix> {
    check_len(g.rows(), d.len())?;
    let mut triplets = Vec::new();
    for (r, &dr) in d.as_slice().iter().enumerate() {
        let (cols, vals) = g.row(r);
        for (&a, &ga) in cols.iter().zip(vals) {
            for (&b, &gb) in cols.iter().zip(vals) {
                triplets.push((a, b, dr * (ga * gb)));
            }
        }
    }
    SparseMatrix::from_triplets(g.cols(), g.cols(), &triplets)
}

/// `Gᵀ (d ∘ (G x))` without forming the product.
pub fn apply_stiffness_factored(g: &SparseMatrix, d: &CoefficientDiagonal, x: &[f64]) -> Result<Vec<f64>> {
    check_len(g.rows(), d.len())?;
    check_len(g.cols(), x.len())?;
    let mut y = vec![0.0; g.cols()];
    let mut work = vec![0.0; g.rows()];
    apply_factored_into(g, d.as_slice(), x, &mut y, &mut work);
    Ok(y)
}

pub(crate) fn apply_factored_into(g: &SparseMatrix, d: &[f64], x: &[f64], y: &mut [f64], work: &mut [f64]) {
    g.matvec_into(x, work);
    for (w, &di) in work.iter_mut().zip(d) {
        *w *= di;
    }
    g.transpose_matvec_into(work, y);
}

/// CR load vector over interior edges with the edge-midpoint rule.
///
/// On a triangle the rule reads `|T|/3 Σ_m f(m) φ_e(m)`, and `φ_e` is 1 at
/// its own midpoint and 0 at the other two.
pub fn load_vector_cr(m: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let full = load_vector_cr_all_edges(m, f);
    m.interior_edges().iter().map(|&e| full[e]).collect()
}

/// Same rule over every edge, boundary edges included.
pub fn load_vector_cr_all_edges(m: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let fm: Vec<f64> = (0..m.num_edges())
        .map(|e| {
            let p = m.edge_midpoint(e);
            f(p[0], p[1])
        })
        .collect();
    let mut b = vec![0.0; m.num_edges()];
    for t in 0..m.num_triangles() {
        let w = m.areas()[t] / 3.0;
        for e in m.triangle_edges(t) {
            b[e] += w * fm[e];
        }
    }
    b
}

/// Degree-5, 7-point triangle rule: barycentric points and weights summing to 1.
fn triangle_rule() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a = (6.0 - s15) / 21.0;
    let b = (6.0 + s15) / 21.0;
    let wa = (155.0 - s15) / 1200.0;
    let wb = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([a, a, 1.0 - 2.0 * a], wa),
        ([a, 1.0 - 2.0 * a, a], wa),
        ([1.0 - 2.0 * a, a, a], wa),
        ([b, b, 1.0 - 2.0 * b], wb),
        ([b, 1.0 - 2.0 * b, b], wb),
        ([1.0 - 2.0 * b, b, b], wb),
    ]
}

/// Broken H¹ seminorm `(Σ_T ∫_T |∇u - ∇u_h|²)^½` between a CR function
/// (interior-edge values, zero on boundary edges) and an exact gradient.
pub fn broken_h1_error_exact(m: &Mesh, u_cr: &[f64], grad_exact: impl Fn(f64, f64) -> [f64; 2]) -> Result<f64> {
    check_len(m.num_interior_edges(), u_cr.len())?;
    let rule = triangle_rule();
    let mut total = 0.0;
    for t in 0..m.num_triangles() {
        let pts = m.triangle_points(t);
        let (grads, area) = barycentric_gradients(pts);
        let mut gh = [0.0; 2];
        for (k, &e) in m.triangle_edges(t).iter().enumerate() {
            if let Some(i) = m.interior_edge_index(e) {
                gh[0] -= 2.0 * u_cr[i] * grads[k][0];
                gh[1] -= 2.0 * u_cr[i] * grads[k][1];
            }
        }
        for (lam, w) in rule {
            let x = lam[0] * pts[0][0] + lam[1] * pts[1][0] + lam[2] * pts[2][0];
            let y = lam[0] * pts[0][1] + lam[1] * pts[1][1] + lam[2] * pts[2][1];
            let g = grad_exact(x, y);
            total += w * area * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
        }
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn single_cell_cr_laplacian() {
        let m = build_mesh(1).unwrap();
        let g = assemble_gradient_cr(&m);
        assert_eq!((g.rows(), g.cols()), (4, 1));
        let a = assemble_stiffness(&g, &CoefficientDiagonal::constant(2, 1.0).unwrap()).unwrap();
        assert!((a.get(0, 0) - 8.0).abs() < 1e-14);
        let y = apply_stiffness_factored(&g, &CoefficientDiagonal::constant(2, 1.0).unwrap(), &[1.0]).unwrap();
        assert!((y[0] - 8.0).abs() < 1e-14);
    }

    #[test]
    fn constant_has_zero_cr_gradient_on_fully_interior_triangles() {
        let m = build_mesh(4).unwrap();
        let g = assemble_gradient_cr(&m);
        let gx = g.matvec(&vec![1.0; g.cols()]).unwrap();
        let nt = m.num_triangles();
        for t in 0..nt {
            if m.triangle_edges(t).iter().all(|&e| !m.edges()[e].boundary) {
                assert!(gx[t].abs() < 1e-13 && gx[nt + t].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn curl_kills_constants_before_drop() {
        let m = build_mesh(3).unwrap();
        let c = assemble_curl_p1_full(&m);
        let y = c.matvec(&vec![1.0; c.cols()]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-13));
        assert_eq!(assemble_curl_p1(&m).cols(), m.num_vertices() - 1);
    }

    #[test]
    fn p1_single_interior_vertex() {
        let m = build_mesh(2).unwrap();
        let g = assemble_gradient_p1(&m);
        let a = assemble_stiffness(&g, &CoefficientDiagonal::constant(8, 1.0).unwrap()).unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 1));
        assert!((a.get(0, 0) - 4.0).abs() < 1e-14);
        assert_eq!(assemble_gradient_p1(&build_mesh(1).unwrap()).cols(), 0);
    }

    #[test]
    fn coefficient_diagonal_validation() {
        let m = build_mesh(1).unwrap();
        let d = coefficient_diagonal(&m, &[1.0, 4.0]).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 4.0, 1.0, 4.0]);
        assert_eq!(d.contrast(), 4.0);
        assert!(coefficient_diagonal(&m, &[1.0, 0.0]).is_err());
        assert!(coefficient_diagonal(&m, &[1.0, -2.0]).is_err());
        assert!(coefficient_diagonal(&m, &[1.0, f64::NAN]).is_err());
        assert!(coefficient_diagonal(&m, &[1.0]).is_err());
        let ramp: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(coefficient_diagonal(&build_mesh(2).unwrap(), &ramp).unwrap().contrast(), 8.0);
    }

    #[test]
    fn load_vector_single_cell() {
        let m = build_mesh(1).unwrap();
        let b = load_vector_cr(&m, |_, _| 1.0);
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(load_vector_cr(&m, |_, _| 0.0), vec![0.0]);
    }

    #[test]
    fn load_partition_of_unity() {
        for n in [1, 2, 5, 9] {
            let m = build_mesh(n).unwrap();
            let total: f64 = load_vector_cr_all_edges(&m, |_, _| 1.0).iter().sum();
            assert!((total - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_error_against_constant_gradients() {
        let m = build_mesh(3).unwrap();
        let e = broken_h1_error_exact(&m, &vec![0.0; m.num_interior_edges()], |_, _| [0.0, 0.0]).unwrap();
        assert_eq!(e, 0.0);
        let e1 = broken_h1_error_exact(&m, &vec![0.0; m.num_interior_edges()], |_, _| [1.0, 0.0]).unwrap();
        assert!((e1 - 1.0).abs() < 1e-13);
    }
}
