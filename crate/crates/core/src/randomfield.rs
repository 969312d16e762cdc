//! Log-normal coefficient fields from a truncated Karhunen–Loève expansion.
//!
//! The covariance operator is discretized by the Nyström method on triangle
//! barycenters with area weights `W`: the symmetric matrix `W½ C W½` is
//! diagonalized and its eigenvectors `ψ` mapped back to modes `φ = W^-½ ψ`,
//! which are orthonormal in the `W`-weighted inner product.
//!
//! Standard normals come from a ChaCha20 stream seeded with `seed_from_u64`,
//! turned into normals by Box–Muller (`u1 = 1 - U`, `u2 = U`, both outputs
//! used in order). A draw of `K` values is a prefix of a draw of `K' > K`.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, symmetric_eigen_top, DenseMatrix};
use crate::mesh::{Mesh, Point};

/// Below this many triangles (or when most pairs are wanted) the full Jacobi
/// eigensolver is used; above it, Lanczos for the leading pairs.
const DENSE_EIGEN_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceKernel {
    /// `exp(-|x - y|² / 2)`.
    Gaussian,
    /// Matérn with half-integer smoothness `nu` and length `ell`.
    Matern { nu: f64, ell: f64 },
}

impl CovarianceKernel {
    pub fn matern(nu: f64, ell: f64) -> Result<Self> {
        let k = CovarianceKernel::Matern { nu, ell };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if let CovarianceKernel::Matern { nu, ell } = *self {
            if ![0.5, 1.5, 2.5].contains(&nu) {
                return Err(Error::InvalidArgument(format!("unsupported Matérn smoothness {nu}; use 0.5, 1.5 or 2.5")));
            }
            if !(ell > 0.0 && ell.is_finite()) {
                return Err(Error::InvalidArgument(format!("correlation length must be positive, got {ell}")));
            }
        }
        Ok(())
    }

    /// Covariance as a function of distance.
    pub fn eval_distance(&self, r: f64) -> f64 {
        match *self {
            CovarianceKernel::Gaussian => (-0.5 * r * r).exp(),
            CovarianceKernel::Matern { nu, ell } => {
                let s = r / ell;
                if nu == 0.5 {
                    (-s).exp()
                } else if nu == 1.5 {
                    let a = 3f64.sqrt() * s;
                    (1.0 + a) * (-a).exp()
                } else {
                    let a = 5f64.sqrt() * s;
                    (1.0 + a + 5.0 * s * s / 3.0) * (-a).exp()
                }
            }
        }
    }
}

impl fmt::Display for CovarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceKernel::Gaussian => write!(f, "gaussian"),
            CovarianceKernel::Matern { nu, ell } => write!(f, "matern(nu={nu}, ell={ell})"),
        }
    }
}

pub fn kernel_eval(k: &CovarianceKernel, x: Point, y: Point) -> f64 {
    k.eval_distance((x[0] - y[0]).hypot(x[1] - y[1]))
}

#[derive(Clone, Debug)]
pub struct KlExpansion {
    kernel: CovarianceKernel,
    eigenvalues: Vec<f64>,
    /// `N_T x K`, column `k` is mode `k` sampled at the barycenters.
    modes: DenseMatrix,
    points: Vec<Point>,
    weights: Vec<f64>,
}

pub fn build_kl(m: &Mesh, kernel: &CovarianceKernel, k: usize) -> Result<KlExpansion> {
    KlExpansion::new(m.barycenters().to_vec(), m.areas().to_vec(), kernel, k)
}

impl KlExpansion {
    /// Nyström expansion for arbitrary points and positive weights.
    pub fn new(points: Vec<Point>, weights: Vec<f64>, kernel: &CovarianceKernel, k: usize) -> Result<Self> {
        kernel.validate()?;
        let n = points.len();
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: weights.len() });
        }
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("number of KL terms must be in 1..={n}, got {k}")));
        }
        if weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
        }
        let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut b = DenseMatrix::zeros(n, n);
        for i in 0..n {
            b[(i, i)] = weights[i] * kernel_eval(kernel, points[i], points[i]);
            for j in 0..i {
                let v = sw[i] * kernel_eval(kernel, points[i], points[j]) * sw[j];
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        let eig = if n <= DENSE_EIGEN_LIMIT || 2 * k > n { symmetric_eigen(&b)? } else { symmetric_eigen_top(&b, k)? };
        drop(b);

        let eigenvalues = eig.values[..k].iter().map(|&l| l.max(0.0)).collect();
        let modes = DenseMatrix::from_fn(n, k, |i, j| eig.vectors[(i, j)] / sw[i]);
        Ok(Self { kernel: *kernel, eigenvalues, modes, points, weights })
    }

    pub fn kernel(&self) -> &CovarianceKernel {
        &self.kernel
    }

    pub fn num_terms(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Descending, nonnegative.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &DenseMatrix {
        &self.modes
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The leading `k` terms.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.num_terms() {
            return Err(Error::InvalidArgument(format!("cannot truncate {} terms to {k}", self.num_terms())));
        }
        let modes = DenseMatrix::from_fn(self.num_points(), k, |i, j| self.modes[(i, j)]);
        Ok(Self {
            kernel: self.kernel,
            eigenvalues: self.eigenvalues[..k].to_vec(),
            modes,
            points: self.points.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Pointwise variance of the truncated field, `Σ λ_k φ_k(x_i)²`.
    pub fn variance_at(&self, i: usize) -> f64 {
        self.eigenvalues.iter().enumerate().map(|(k, l)| l * self.modes[(i, k)].powi(2)).sum()
    }

    /// Evaluates `Σ √λ_k ξ_k φ_k` at every point.
    pub fn log_field(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.num_terms() {
            return Err(Error::DimensionMismatch { expected: self.num_terms(), found: xi.len() });
        }
        let coef: Vec<f64> = self.eigenvalues.iter().zip(xi).map(|(l, x)| l.sqrt() * x).collect();
        self.modes.matvec(&coef)
    }
}

/// `count` standard normals from the seeded stream.
pub fn standard_normals(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let u1 = 1.0 - rng.gen::<f64>();
        let u2 = rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        out.push(radius * c);
        out.push(radius * s);
    }
    out.truncate(count);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub kappa_per_triangle: Vec<f64>,
    pub contrast: f64,
    /// Standard normals used; empty for fields read from a file.
    pub xi: Vec<f64>,
}

pub fn sample_field(kl: &KlExpansion, rng_seed: u64) -> FieldSample {
    FieldSample::from_xi(kl, standard_normals(rng_seed, kl.num_terms())).expect("xi length matches the expansion")
}

impl FieldSample {
    pub fn from_xi(kl: &KlExpansion, xi: Vec<f64>) -> Result<Self> {
        let kappa: Vec<f64> = kl.log_field(&xi)?.into_iter().map(f64::exp).collect();
        let mut s = Self::from_kappa(kappa)?;
        s.xi = xi;
        Ok(s)
    }

    pub fn from_kappa(kappa: Vec<f64>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::InvalidArgument("empty coefficient field".into()));
        }
        if let Some((t, &k)) = kappa.iter().enumerate().find(|(_, k)| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "coefficient on triangle {t} must be positive and finite, got {k}"
            )));
        }
        let (lo, hi) = kappa.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &k| (lo.min(k), hi.max(k)));
        Ok(Self { kappa_per_triangle: kappa, contrast: hi / lo, xi: Vec::new() })
    }
}

/// One `κ_T` per line in triangle order, under a `kappa` header.
pub fn write_field_csv(path: impl AsRef<Path>, kappa: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "kappa")?;
    for k in kappa {
        writeln!(w, "{k:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`]; the header line is optional.
pub fn read_field_csv(path: impl AsRef<Path>) -> Result<FieldSample> {
    let reader = BufReader::new(File::open(path)?);
    let mut kappa = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || (lineno == 0 && field.eq_ignore_ascii_case("kappa")) {
            continue;
        }
        let v: f64 = field.parse().map_err(|e| Error::Parse(format!("line {}: `{field}`: {e}", lineno + 1)))?;
        kappa.push(v);
    }
    FieldSample::from_kappa(kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    /// General Matérn form with `K_ν` in closed form for half-integer `ν`.
    fn matern_general(nu: f64, ell: f64, r: f64) -> f64 {
        let z = (2.0 * nu).sqrt() * r / ell;
        let base = (PI / (2.0 * z)).sqrt() * (-z).exp();
        let (bessel, gamma) = match nu {
            0.5 => (base, PI.sqrt()),
            1.5 => (base * (1.0 + 1.0 / z), PI.sqrt() / 2.0),
            _ => (base * (1.0 + 3.0 / z + 3.0 / (z * z)), 3.0 * PI.sqrt() / 4.0),
        };
        2f64.powf(1.0 - nu) / gamma * z.powf(nu) * bessel
    }

    #[test]
    fn kernel_values() {
        let g = CovarianceKernel::Gaussian;
        assert_eq!(kernel_eval(&g, [0.3, 0.4], [0.3, 0.4]), 1.0);
        assert!((kernel_eval(&g, [0.0, 0.0], [1.0, 1.0]) - (-1f64).exp()).abs() < 1e-15);
        let m = CovarianceKernel::matern(0.5, 5.0).unwrap();
        assert!((kernel_eval(&m, [0.0, 0.0], [1.0, 0.0]) - 0.818730753).abs() < 1e-9);
        for nu in [0.5, 1.5, 2.5] {
            let k = CovarianceKernel::matern(nu, 0.7).unwrap();
            assert_eq!(k.eval_distance(0.0), 1.0);
            for r in [0.01, 0.3, 1.0, 2.5] {
                assert!((k.eval_distance(r) - matern_general(nu, 0.7, r)).abs() < 1e-12, "nu={nu} r={r}");
            }
        }
        assert!(CovarianceKernel::matern(1.0, 1.0).is_err());
        assert!(CovarianceKernel::matern(0.5, 0.0).is_err());
    }

    #[test]
    fn full_expansion_preserves_trace() {
        let m = build_mesh(4).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::matern(0.5, 1.0).unwrap(), m.num_triangles()).unwrap();
        let trace: f64 = kl.eigenvalues().iter().sum();
        assert!((trace - 1.0).abs() < 1e-8);
        assert!(kl.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        assert!(build_kl(&m, &CovarianceKernel::Gaussian, m.num_triangles() + 1).is_err());
        assert!(build_kl(&m, &CovarianceKernel::Gaussian, 0).is_err());
    }

    #[test]
    fn modes_are_weighted_orthonormal() {
        let m = build_mesh(5).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::matern(1.5, 0.5).unwrap(), 8).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let ip: f64 =
                    (0..kl.num_points()).map(|i| kl.weights()[i] * kl.modes()[(i, a)] * kl.modes()[(i, b)]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn truncation_is_a_prefix() {
        let m = build_mesh(3).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::Gaussian, 10).unwrap();
        let short = kl.truncated(4).unwrap();
        assert_eq!(short.eigenvalues(), &kl.eigenvalues()[..4]);
        assert!(kl.truncated(11).is_err());
        let long = standard_normals(9, 10);
        assert_eq!(standard_normals(9, 3), long[..3]);
    }

    #[test]
    fn zero_xi_gives_unit_field() {
        let m = build_mesh(3).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::Gaussian, 5).unwrap();
        let s = FieldSample::from_xi(&kl, vec![0.0; 5]).unwrap();
        assert!(s.kappa_per_triangle.iter().all(|&k| k == 1.0));
        assert_eq!(s.contrast, 1.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = build_mesh(3).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::Gaussian, 5).unwrap();
        assert_eq!(sample_field(&kl, 7), sample_field(&kl, 7));
        assert_ne!(sample_field(&kl, 7), sample_field(&kl, 8));
    }

    #[test]
    fn pointwise_variance_matches_expansion() {
        let m = build_mesh(4).unwrap();
        let kl = build_kl(&m, &CovarianceKernel::matern(0.5, 1.0).unwrap(), 6).unwrap();
        let i = 13;
        let samples = 10_000;
        let vals: Vec<f64> = (0..samples).map(|s| sample_field(&kl, s).kappa_per_triangle[i].ln()).collect();
        let mean = vals.iter().sum::<f64>() / samples as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let expected = kl.variance_at(i);
        assert!((var - expected).abs() <= 0.1 * expected, "{var} vs {expected}");
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let kappa = vec![0.1, 1.0 / 3.0, 7.25, 1e-5];
        write_field_csv(&path, &kappa).unwrap();
        let s = read_field_csv(&path).unwrap();
        assert_eq!(s.kappa_per_triangle, kappa);
        assert!((s.contrast - 7.25e5).abs() < 1e-6);
        std::fs::write(&path, "kappa\n1.0\n-2.0\n").unwrap();
        assert!(read_field_csv(&path).is_err());
        std::fs::write(&path, "kappa\n1.0\nabc\n").unwrap();
        assert!(read_field_csv(&path).is_err());
    }
}
