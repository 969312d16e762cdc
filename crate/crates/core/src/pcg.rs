//! Preconditioned conjugate gradients with a Lanczos condition estimate.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, tridiagonal_eigen};
use crate::operators::CoefficientDiagonal;
use crate::preconditioner::{BlockOperator, HFactorization, MinvWork};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcgConfig {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self { rel_tolerance: 1e-8, max_iterations: 500 }
    }
}

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {}", self.rel_tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// CR block followed by the curl block.
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub condition_estimate: f64,
    pub contrast: f64,
    pub converged: bool,
    /// `sqrt(rᵀ M⁻¹ r)` before the first and after every iteration.
    pub residual_history: Vec<f64>,
}

/// Output of the operator-agnostic iteration.
#[derive(Clone, Debug)]
pub struct CgRun {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    /// `(alpha, beta)` of each iteration.
    pub coefficients: Vec<(f64, f64)>,
}

/// PCG from a zero initial guess. `apply_a(x, y)` writes `A x` into `y`;
/// `apply_prec(r, z)` writes `M⁻¹ r` into `z`.
pub fn conjugate_gradient(
    mut apply_a: impl FnMut(&[f64], &mut [f64]),
    mut apply_prec: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    cfg: &PcgConfig,
) -> CgRun {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    if rhs.iter().all(|&v| v == 0.0) {
        return CgRun {
            solution: x,
            iterations: 0,
            converged: true,
            residual_history: Vec::new(),
            coefficients: Vec::new(),
        };
    }
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    apply_prec(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let initial = rz.max(0.0).sqrt();
    let mut history = vec![initial];
    let mut coefficients = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        apply_a(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        apply_prec(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        coefficients.push((alpha, beta));
        let res = rz_next.max(0.0).sqrt();
        history.push(res);
        if res <= cfg.rel_tolerance * initial {
            converged = true;
            break;
        }
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
    CgRun { solution: x, iterations: coefficients.len(), converged, residual_history: history, coefficients }
}

/// Extreme-eigenvalue ratio of the Lanczos tridiagonal implied by the CG
/// coefficients. The `beta` of the final iteration is not used.
pub fn estimate_condition(cg_scalars: &[(f64, f64)]) -> f64 {
    let k = cg_scalars.len();
    if k == 0 {
        return 1.0;
    }
    let mut diag = vec![0.0; k];
    let mut off = vec![0.0; k.saturating_sub(1)];
    for j in 0..k {
        let (alpha, _) = cg_scalars[j];
        diag[j] = 1.0 / alpha;
        if j > 0 {
            let (alpha_prev, beta_prev) = cg_scalars[j - 1];
            diag[j] += beta_prev / alpha_prev;
            off[j - 1] = beta_prev.sqrt() / alpha_prev;
        }
    }
    if k == 1 {
        return 1.0;
    }
    let Ok(eig) = tridiagonal_eigen(&diag, &off) else {
        return f64::NAN;
    };
    let max = eig.values[0];
    let min = eig.values[k - 1];
    (max / min).max(1.0)
}

/// Solves `Â û = rhs` with the preconditioner `M⁻¹ = H⁻¹ D⁻¹ H⁻ᵀ`.
pub fn pcg_solve(
    op: &BlockOperator<'_>,
    f: &HFactorization,
    d: &CoefficientDiagonal,
    rhs: &[f64],
    cfg: &PcgConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    check_len(op.dim(), rhs.len())?;
    check_len(f.dim(), rhs.len())?;
    check_len(f.dim(), d.len())?;
    let mut a_work = vec![0.0; d.len()];
    let mut m_work = MinvWork::new(f.dim());
    let run = conjugate_gradient(
        |x, y| op.apply_into(x, y, &mut a_work),
        |r, z| f.apply_minv_into(d, r, z, &mut m_work),
        rhs,
        cfg,
    );
    Ok(SolveReport {
        condition_estimate: estimate_condition(&run.coefficients),
        solution: run.solution,
        iterations: run.iterations,
        contrast: d.contrast(),
        converged: run.converged,
        residual_history: run.residual_history,
    })
}
