//! Monte Carlo campaigns over log-normal coefficient realizations.
//!
//! Realization `i` uses seed `base_seed + i`. Solves run in parallel, but
//! every sum is accumulated in realization order, so results do not depend
//! on the number of threads.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::Mesh;
use crate::operators::{coefficient_diagonal, load_vector_cr, NaturalFactors};
use crate::pcg::{pcg_solve, PcgConfig};
use crate::preconditioner::{build_h, BlockOperator, FactorMethod, HFactorization};
use crate::randomfield::{build_kl, sample_field, CovarianceKernel, KlExpansion};

/// Added to the base seed for reference runs so their streams never meet
/// the realization seeds of an ordinary run.
pub const REFERENCE_SEED_OFFSET: u64 = 1 << 32;

/// Realizations solved per parallel batch.
const BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Forcing {
    Constant(f64),
    /// `2π² sin(πx) sin(πy)`.
    SineProduct,
}

impl Default for Forcing {
    fn default() -> Self {
        Forcing::Constant(1.0)
    }
}

impl Forcing {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Forcing::Constant(c) => c,
            Forcing::SineProduct => {
                let pi = std::f64::consts::PI;
                2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
            }
        }
    }
}

impl fmt::Display for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Constant(c) => write!(f, "const:{c}"),
            Forcing::SineProduct => f.write_str("sine"),
        }
    }
}

impl FromStr for Forcing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("sine") {
            return Ok(Forcing::SineProduct);
        }
        let value = s.strip_prefix("const:").unwrap_or(s);
        let c: f64 = value
            .parse()
            .map_err(|_| Error::Parse(format!("unknown forcing `{s}`; use `sine`, `const:C` or a number")))?;
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("forcing constant must be finite, got {c}")));
        }
        Ok(Forcing::Constant(c))
    }
}

impl TryFrom<String> for Forcing {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Forcing> for String {
    fn from(f: Forcing) -> String {
        f.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub kernel: CovarianceKernel,
    pub kl_terms: usize,
    pub realizations: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub forcing: Forcing,
    #[serde(default)]
    pub pcg: PcgConfig,
    #[serde(default)]
    pub method: FactorMethod,
    /// Realization counts at which the running mean solution is kept.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

impl McConfig {
    pub fn new(n: usize, kernel: CovarianceKernel, kl_terms: usize, realizations: usize, base_seed: u64) -> Self {
        Self {
            n,
            kernel,
            kl_terms,
            realizations,
            base_seed,
            forcing: Forcing::default(),
            pcg: PcgConfig::default(),
            method: FactorMethod::default(),
            checkpoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("mesh size must be at least 1".into()));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("at least one realization is required".into()));
        }
        let nt = 2 * self.n * self.n;
        if self.kl_terms == 0 || self.kl_terms > nt {
            return Err(Error::InvalidArgument(format!("KL terms must be in 1..={nt}, got {}", self.kl_terms)));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.realizations) {
            return Err(Error::InvalidArgument(format!("checkpoint {c} outside 1..={}", self.realizations)));
        }
        self.kernel.validate()?;
        self.pcg.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub iterations: usize,
    pub condition_estimate: f64,
    pub contrast: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Unbiased; zero for a single sample.
    pub variance: f64,
}

impl Stat {
    pub fn from_samples(xs: impl ExactSizeIterator<Item = f64> + Clone) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, variance: f64::NAN };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let variance = if n > 1 { xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, variance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub realizations: usize,
    pub mean_solution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub config: McConfig,
    pub condition: Stat,
    pub iterations: Stat,
    pub contrast: Stat,
    pub nonconverged: usize,
    /// Realizations whose condition estimate exceeds `1.05 (2η - 1)`.
    pub bound_violations: usize,
    pub mean_solution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1_error: Option<f64>,
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
    #[serde(skip)]
    pub records: Vec<RealizationRecord>,
}

impl McSummary {
    pub fn any_nonconverged(&self) -> bool {
        self.nonconverged > 0
    }

    pub fn checkpoint(&self, realizations: usize) -> Option<&[f64]> {
        self.checkpoints.iter().find(|c| c.realizations == realizations).map(|c| c.mean_solution.as_slice())
    }
}

/// Runs the campaign on the current rayon pool.
pub fn run_mc(cfg: &McConfig, f: &HFactorization, kl: &KlExpansion) -> Result<McSummary> {
    run_mc_inner(cfg, f, kl, cfg.base_seed)
}

/// Like [`run_mc`] with an explicit worker count (`None` uses the global pool).
pub fn run_mc_threads(
    cfg: &McConfig,
    f: &HFactorization,
    kl: &KlExpansion,
    threads: Option<usize>,
) -> Result<McSummary> {
    with_threads(threads, || run_mc(cfg, f, kl))
}

pub(crate) fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(0) => Err(Error::InvalidArgument("thread count must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))?
            .install(job),
    }
}

fn run_mc_inner(cfg: &McConfig, f: &HFactorization, kl: &KlExpansion, base_seed: u64) -> Result<McSummary> {
    cfg.validate()?;
    let mesh = Mesh::new(cfg.n)?;
    check_len(2 * mesh.num_triangles(), f.dim())?;
    check_len(mesh.num_triangles(), kl.num_points())?;
    if kl.num_terms() < cfg.kl_terms {
        return Err(Error::InvalidArgument(format!(
            "expansion has {} terms, {} requested",
            kl.num_terms(),
            cfg.kl_terms
        )));
    }
    let truncated;
    let kl = if kl.num_terms() == cfg.kl_terms {
        kl
    } else {
        truncated = kl.truncated(cfg.kl_terms)?;
        &truncated
    };
    let factors = NaturalFactors::new(&mesh);
    let ne = factors.num_cr();
    let mut rhs = load_vector_cr(&mesh, |x, y| cfg.forcing.eval(x, y));
    rhs.resize(f.dim(), 0.0);

    let solve = |i: usize| -> Result<(RealizationRecord, Vec<f64>)> {
        let seed = base_seed.wrapping_add(i as u64);
        let field = sample_field(kl, seed);
        let d = coefficient_diagonal(&mesh, &field.kappa_per_triangle)?;
        let op = BlockOperator::new(&factors, &d)?;
        let mut rep = pcg_solve(&op, f, &d, &rhs, &cfg.pcg)?;
        rep.solution.truncate(ne);
        let record = RealizationRecord {
            index: i,
            seed,
            iterations: rep.iterations,
            condition_estimate: rep.condition_estimate,
            contrast: rep.contrast,
            converged: rep.converged,
        };
        Ok((record, rep.solution))
    };

    let mut checkpoints_wanted = cfg.checkpoints.clone();
    checkpoints_wanted.sort_unstable();
    checkpoints_wanted.dedup();
    let mut checkpoints = Vec::with_capacity(checkpoints_wanted.len());
    let mut records = Vec::with_capacity(cfg.realizations);
    let mut sum = vec![0.0; ne];
    let mut start = 0;
    while start < cfg.realizations {
        let end = (start + BATCH).min(cfg.realizations);
        let batch: Vec<_> = (start..end).into_par_iter().map(solve).collect::<Result<_>>()?;
        for (record, u) in batch {
            for (s, v) in sum.iter_mut().zip(&u) {
                *s += v;
            }
            records.push(record);
            let done = records.len();
            if checkpoints_wanted.binary_search(&done).is_ok() {
                checkpoints.push(Checkpoint {
                    realizations: done,
                    mean_solution: sum.iter().map(|s| s / done as f64).collect(),
                });
            }
        }
        start = end;
    }

    let r = cfg.realizations as f64;
    Ok(McSummary {
        config: cfg.clone(),
        condition: Stat::from_samples(records.iter().map(|r| r.condition_estimate)),
        iterations: Stat::from_samples(records.iter().map(|r| r.iterations as f64)),
        contrast: Stat::from_samples(records.iter().map(|r| r.contrast)),
        nonconverged: records.iter().filter(|r| !r.converged).count(),
        bound_violations: records.iter().filter(|r| r.condition_estimate > 1.05 * (2.0 * r.contrast - 1.0)).count(),
        mean_solution: sum.into_iter().map(|s| s / r).collect(),
        h1_error: None,
        checkpoints,
        records,
    })
}

/// Builds the mesh, factorization and expansion, then runs the campaign.
pub fn run_campaign(cfg: &McConfig, threads: Option<usize>) -> Result<McSummary> {
    cfg.validate()?;
    let mesh = Mesh::new(cfg.n)?;
    let factors = NaturalFactors::new(&mesh);
    let h = build_h(&mesh, &factors, cfg.method)?;
    let kl = build_kl(&mesh, &cfg.kernel, cfg.kl_terms)?;
    run_mc_threads(cfg, &h, &kl, threads)
}

/// `sqrt(δᵀ Gᵀ G δ)` for an already assembled CR gradient.
pub fn broken_h1_seminorm(g_cr: &SparseMatrix, u: &[f64], u_ref: &[f64]) -> Result<f64> {
    check_len(g_cr.cols(), u.len())?;
    check_len(g_cr.cols(), u_ref.len())?;
    let delta: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| a - b).collect();
    let g = g_cr.matvec(&delta)?;
    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Unit-coefficient broken H¹ seminorm of `u - u_ref`.
pub fn broken_h1_error(m: &Mesh, u: &[f64], u_ref: &[f64]) -> Result<f64> {
    broken_h1_seminorm(&NaturalFactors::new(m).g_cr, u, u_ref)
}

/// Mean solution over `r_ref` realizations with `k_ref` KL terms, drawn from
/// the seed stream starting at `base_seed + 2³²`.
pub fn reference_solution(cfg: &McConfig, k_ref: usize, r_ref: usize) -> Result<Vec<f64>> {
    if k_ref < cfg.kl_terms {
        return Err(Error::InvalidArgument(format!("reference needs at least {} KL terms, got {k_ref}", cfg.kl_terms)));
    }
    let mesh = Mesh::new(cfg.n)?;
    let factors = NaturalFactors::new(&mesh);
    let h = build_h(&mesh, &factors, cfg.method)?;
    let kl = build_kl(&mesh, &cfg.kernel, k_ref)?;
    reference_solution_with(cfg, &h, &kl, k_ref, r_ref)
}

/// [`reference_solution`] reusing an existing factorization and expansion.
pub fn reference_solution_with(
    cfg: &McConfig,
    f: &HFactorization,
    kl: &KlExpansion,
    k_ref: usize,
    r_ref: usize,
) -> Result<Vec<f64>> {
    if k_ref < cfg.kl_terms {
        return Err(Error::InvalidArgument(format!("reference needs at least {} KL terms, got {k_ref}", cfg.kl_terms)));
    }
    let ref_cfg = McConfig { kl_terms: k_ref, realizations: r_ref, checkpoints: Vec::new(), ..cfg.clone() };
    Ok(run_mc_inner(&ref_cfg, f, kl, cfg.base_seed.wrapping_add(REFERENCE_SEED_OFFSET))?.mean_solution)
}

pub fn write_samples_csv(path: impl AsRef<Path>, records: &[RealizationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,seed,iterations,condition,contrast,converged")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.16e},{:.16e},{}",
            r.index, r.seed, r.iterations, r.condition_estimate, r.contrast, r.converged as u8
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &McSummary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<McSummary> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}
