//! Self-check suite run by `natfact verify`.

use std::fmt;

use crate::error::Result;
use crate::linalg::{symmetric_eigen, DenseMatrix, SparseMatrix};
use crate::mesh::Mesh;
use crate::operators::{assemble_stiffness, load_vector_cr, CoefficientDiagonal, NaturalFactors};
use crate::pcg::{pcg_solve, PcgConfig};
use crate::preconditioner::{build_h, condition_bound, BlockOperator, FactorMethod, HFactorization};

/// Largest mesh accepted by the suite.
pub const MAX_VERIFY_N: usize = 16;
/// Dense spectral checks run up to this size.
const DENSE_N: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Flips the sign of one nonzero curl entry before checking.
    pub corrupt_curl: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub n: usize,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<4} n={:<3} {:<28} {}", if self.passed { "ok" } else { "FAIL" }, self.n, self.name, self.detail)
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn run_suite(n_max: usize, opts: VerifyOptions) -> Result<Vec<CheckResult>> {
    if n_max == 0 || n_max > MAX_VERIFY_N {
        return Err(crate::Error::InvalidArgument(format!("n-max must be in 1..={MAX_VERIFY_N}, got {n_max}")));
    }
    let mut out = Vec::new();
    for n in 1..=n_max {
        let mesh = Mesh::new(n)?;
        let mut factors = NaturalFactors::new(&mesh);
        if opts.corrupt_curl {
            factors.c_tilde = flip_first(&factors.c_tilde);
        }
        check_n(&mesh, &factors, &mut out)?;
    }
    Ok(out)
}

fn flip_first(a: &SparseMatrix) -> SparseMatrix {
    let mut t: Vec<_> = a.triplets().collect();
    if let Some(first) = t.iter_mut().find(|e| e.2 != 0.0) {
        first.2 = -first.2;
    }
    SparseMatrix::from_triplets(a.rows(), a.cols(), &t).expect("same pattern")
}

fn push(out: &mut Vec<CheckResult>, name: &'static str, n: usize, passed: bool, detail: String) {
    out.push(CheckResult { name, n, passed, detail });
}

fn check_n(mesh: &Mesh, factors: &NaturalFactors, out: &mut Vec<CheckResult>) -> Result<()> {
    let n = mesh.n();
    let nt = mesh.num_triangles();
    let nv_all = mesh.num_vertices();
    let euler = nv_all as isize - mesh.num_edges() as isize + nt as isize;
    let counts = nt == 2 * n * n
        && mesh.num_interior_edges() == 3 * n * n - 2 * n
        && mesh.num_interior_vertices() == (n - 1) * (n - 1)
        && euler == 1
        && factors.num_cr() + factors.num_curl() == 2 * nt;
    push(
        out,
        "counts/euler",
        n,
        counts,
        format!(
            "N_T={nt} N_e={} V-E+F={euler} cols={}",
            mesh.num_interior_edges(),
            factors.num_cr() + factors.num_curl()
        ),
    );

    let gtc = factors.g_cr.transpose_mul(&factors.c_tilde)?.max_abs();
    push(out, "orthogonality", n, gtc <= 1e-12, format!("max|G^T C|={gtc:.2e}"));

    let kappa = pseudo_random_field(nt, n as u64);
    let d = CoefficientDiagonal::new(&kappa)?;
    let natural = assemble_stiffness(&factors.g_cr, &d)?.to_dense();
    let looped = element_loop_stiffness(mesh, &kappa);
    let rel = max_relative_difference(&natural, &looped);
    push(out, "element-loop equivalence", n, rel <= 1e-12, format!("max rel err={rel:.2e}"));

    let h = match build_h(mesh, factors, FactorMethod::Lu) {
        Ok(h) => h,
        Err(e) => {
            push(out, "nonsingular H", n, false, e.to_string());
            return Ok(());
        }
    };

    if n <= DENSE_N {
        let hth = h.h().transpose().matmul(h.h())?;
        let lmin = symmetric_eigen(&hth)?.values.last().copied().unwrap_or(0.0);
        let smin = lmin.max(0.0).sqrt();
        push(out, "nonsingular H", n, smin > 1e-10, format!("sigma_min={smin:.3e}"));

        let ctc = factors.c_tilde.transpose_mul(&factors.c_tilde)?.to_dense();
        let lmin = if ctc.rows() == 0 { 1.0 } else { symmetric_eigen(&ctc)?.values.last().copied().unwrap_or(0.0) };
        push(out, "curl block definite", n, lmin > 1e-12, format!("lambda_min={lmin:.3e}"));

        let (cond, bound) = exact_preconditioned_condition(factors, &h, &d)?;
        push(out, "condition bound", n, cond <= bound + 1e-8, format!("cond={cond:.4} bound={bound:.4}"));
    }

    let one = CoefficientDiagonal::constant(nt, 1.0)?;
    let op = BlockOperator::new(factors, &one)?;
    let mut rhs = load_vector_cr(mesh, |_, _| 1.0);
    rhs.resize(2 * nt, 0.0);
    let rep = pcg_solve(&op, &h, &one, &rhs, &PcgConfig::default())?;
    push(out, "unit coefficient exactness", n, rep.iterations == 1, format!("iterations={}", rep.iterations));
    Ok(())
}

/// Log-uniform values in `[e^-2, e^2]` from a fixed LCG.
fn pseudo_random_field(len: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0).exp()
        })
        .collect()
}

/// CR stiffness by a direct loop over triangles and local edge pairs.
pub fn element_loop_stiffness(mesh: &Mesh, kappa: &[f64]) -> DenseMatrix {
    let ne = mesh.num_interior_edges();
    let mut a = DenseMatrix::zeros(ne, ne);
    for (t, &k) in kappa.iter().enumerate() {
        let p = mesh.triangle_points(t);
        let twice_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        // ∇(1 - 2λ_k) = -2 ∇λ_k, with ∇λ_k the rotated opposite side over 2|T|.
        let grad = |k: usize| {
            let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
            [-2.0 * (b[1] - c[1]) / twice_area, -2.0 * (c[0] - b[0]) / twice_area]
        };
        let edges = mesh.triangle_edges(t);
        for (i, &ei) in edges.iter().enumerate() {
            let Some(r) = mesh.interior_edge_index(ei) else { continue };
            let gi = grad(i);
            for (j, &ej) in edges.iter().enumerate() {
                let Some(c) = mesh.interior_edge_index(ej) else { continue };
                let gj = grad(j);
                a[(r, c)] += k * 0.5 * twice_area * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
    }
    a
}

fn max_relative_difference(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let scale = b.max_abs().max(f64::MIN_POSITIVE);
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

/// Extreme eigenvalue ratio of `M⁻¹ Â` and the bound `2η - 1`.
///
/// `M⁻¹Â` is similar to the symmetric `D^-½ H⁻ᵀ Â H⁻¹ D^-½`, which is
/// formed column by column with the stored factorization.
pub fn exact_preconditioned_condition(
    factors: &NaturalFactors,
    h: &HFactorization,
    d: &CoefficientDiagonal,
) -> Result<(f64, f64)> {
    let dim = h.dim();
    let op = BlockOperator::new(factors, d)?;
    let sd: Vec<f64> = d.as_slice().iter().map(|v| v.sqrt()).collect();
    let mut s = DenseMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for j in 0..dim {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0 / sd[j];
        let col = h.solve_ht(&op.apply(&h.solve_h(&e)?)?)?;
        for i in 0..dim {
            s[(i, j)] = col[i] / sd[i];
        }
    }
    let sym = DenseMatrix::from_fn(dim, dim, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let values = symmetric_eigen(&sym)?.values;
    Ok((values[0] / values[dim - 1], condition_bound(d)))
}
