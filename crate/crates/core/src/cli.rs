//! `natfact` command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::matrix_market::{save_dense, save_sparse};
use crate::mesh::Mesh;
use crate::montecarlo::{
    broken_h1_seminorm, reference_solution_with, run_mc_threads, with_threads, write_samples_csv, write_summary_json,
    Forcing, McConfig,
};
use crate::operators::{assemble_stiffness, coefficient_diagonal, load_vector_cr, NaturalFactors};
use crate::pcg::{pcg_solve, PcgConfig};
use crate::preconditioner::{assemble_h, build_h, condition_bound, BlockOperator, FactorMethod};
use crate::randomfield::{build_kl, read_field_csv, sample_field, CovarianceKernel, FieldSample};
use crate::verify::{all_passed, run_suite, VerifyOptions};

#[derive(Debug, Parser)]
#[command(
    name = "natfact",
    version,
    about = "Natural-factor Crouzeix-Raviart solver with a coefficient-independent preconditioner"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the built-in invariant checks for n = 1..n-max.
    Verify(VerifyArgs),
    /// Solve one problem and write the CR solution.
    Solve(SolveArgs),
    /// Run a Monte Carlo campaign.
    Mc(McArgs),
    /// Write an operator in MatrixMarket format.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 8)]
    pub n_max: usize,
    /// Corrupt the curl factor to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CovKind {
    Gaussian,
    Matern,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum)]
    pub cov: Option<CovKind>,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ell: f64,
    #[arg(long)]
    pub kl_terms: Option<usize>,
}

impl KernelArgs {
    fn kernel(&self) -> Result<Option<CovarianceKernel>> {
        match self.cov {
            None => Ok(None),
            Some(CovKind::Gaussian) => Ok(Some(CovarianceKernel::Gaussian)),
            Some(CovKind::Matern) => CovarianceKernel::matern(self.nu, self.ell).map(Some),
        }
    }
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[arg(long, conflicts_with_all = ["kappa_csv", "cov"])]
    pub kappa_const: Option<f64>,
    #[arg(long, conflicts_with = "cov")]
    pub kappa_csv: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FieldArgs {
    /// `None` when no source was given.
    fn sample(&self, mesh: &Mesh) -> Result<Option<(FieldSample, String)>> {
        if let Some(c) = self.kappa_const {
            let s = FieldSample::from_kappa(vec![c; mesh.num_triangles()])?;
            return Ok(Some((s, format!("const:{c}"))));
        }
        if let Some(path) = &self.kappa_csv {
            let s = read_field_csv(path)?;
            if s.kappa_per_triangle.len() != mesh.num_triangles() {
                return Err(Error::InvalidArgument(format!(
                    "{} holds {} values, mesh has {} triangles",
                    path.display(),
                    s.kappa_per_triangle.len(),
                    mesh.num_triangles()
                )));
            }
            return Ok(Some((s, format!("csv:{}", path.display()))));
        }
        if let Some(kernel) = self.kernel.kernel()? {
            let k = self
                .kernel
                .kl_terms
                .ok_or_else(|| Error::InvalidArgument("--kl-terms is required with --cov".into()))?;
            let kl = build_kl(mesh, &kernel, k)?;
            return Ok(Some((sample_field(&kl, self.seed), format!("kl:{kernel},K={k},seed={}", self.seed))));
        }
        Ok(None)
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value = "const:1")]
    pub forcing: Forcing,
    #[arg(long, default_value = "lu")]
    pub method: FactorMethod,
}

impl SolverArgs {
    fn pcg(&self) -> Result<PcgConfig> {
        let cfg = PcgConfig { rel_tolerance: self.tol, max_iterations: self.max_iter };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the solution path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// KL terms of a reference mean; enables the H1 error in the summary.
    #[arg(long)]
    pub reference_terms: Option<usize>,
    #[arg(long, requires = "reference_terms")]
    pub reference_realizations: Option<usize>,
    #[arg(long)]
    pub out_summary: PathBuf,
    #[arg(long)]
    pub out_samples: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MatrixKind {
    #[value(name = "G")]
    G,
    #[value(name = "C")]
    C,
    #[value(name = "H")]
    H,
    #[value(name = "Acr")]
    Acr,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, ignore_case = true)]
    pub matrix: MatrixKind,
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Replaces `--config PATH` by the file's `key=value` pairs as flags placed
/// right after the subcommand, so flags given on the command line win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(args);
    };
    let mut args = args;
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_owned(),
        None if pos < args.len() => args.remove(pos).to_string_lossy().into_owned(),
        None => return Err(Error::InvalidArgument("--config needs a path".into())),
    };
    let text = std::fs::read_to_string(&path)?;
    let mut injected = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Parse(format!("{path}:{}: expected key=value", lineno + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        match value.trim() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(v));
            }
        }
    }
    let sub = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map_or(args.len(), |p| p + 2);
    let sub = sub.min(args.len());
    args.splice(sub..sub, injected);
    Ok(args)
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Verify(a) => cmd_verify(&a),
        Command::Solve(a) => cmd_solve(&a).map(|_| 0),
        Command::Mc(a) => cmd_mc(&a).map(|_| 0),
        Command::Export(a) => cmd_export(&a).map(|_| 0),
    }
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let results = run_suite(a.n_max, VerifyOptions { corrupt_curl: a.inject_fault })?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if all_passed(&results) { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
struct SolveReportJson<'a> {
    n: usize,
    field: &'a str,
    forcing: Forcing,
    method: FactorMethod,
    tolerance: f64,
    iterations: usize,
    converged: bool,
    condition_estimate: f64,
    contrast: f64,
    condition_bound: f64,
    final_relative_residual: f64,
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    Ok(())
}

pub fn cmd_solve(a: &SolveArgs) -> Result<()> {
    check_n(a.n)?;
    let pcg = a.solver.pcg()?;
    let mesh = Mesh::new(a.n)?;
    let (field, source) = a
        .field
        .sample(&mesh)?
        .ok_or_else(|| Error::InvalidArgument("one of --kappa-const, --kappa-csv or --cov is required".into()))?;
    let factors = NaturalFactors::new(&mesh);
    let h = build_h(&mesh, &factors, a.solver.method)?;
    let d = coefficient_diagonal(&mesh, &field.kappa_per_triangle)?;
    let op = BlockOperator::new(&factors, &d)?;
    let mut rhs = load_vector_cr(&mesh, |x, y| a.solver.forcing.eval(x, y));
    rhs.resize(h.dim(), 0.0);
    let rep = pcg_solve(&op, &h, &d, &rhs, &pcg)?;

    let mut w = BufWriter::new(File::create(&a.out)?);
    writeln!(w, "edge,x,y,value")?;
    for (dof, &e) in mesh.interior_edges().iter().enumerate() {
        let [x, y] = mesh.edge_midpoint(e);
        writeln!(w, "{e},{x:.16e},{y:.16e},{:.16e}", rep.solution[dof])?;
    }
    w.flush()?;

    let first = rep.residual_history.first().copied().unwrap_or(0.0);
    let last = rep.residual_history.last().copied().unwrap_or(0.0);
    let report = SolveReportJson {
        n: a.n,
        field: &source,
        forcing: a.solver.forcing,
        method: a.solver.method,
        tolerance: pcg.rel_tolerance,
        iterations: rep.iterations,
        converged: rep.converged,
        condition_estimate: rep.condition_estimate,
        contrast: rep.contrast,
        condition_bound: condition_bound(&d),
        final_relative_residual: if first > 0.0 { last / first } else { 0.0 },
    };
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("json"));
    write_json(&report_path, &report)?;
    println!(
        "iterations={} condition={:.4} contrast={:.4} converged={}",
        rep.iterations, rep.condition_estimate, rep.contrast, rep.converged
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_mc(a: &McArgs) -> Result<()> {
    check_n(a.n)?;
    let kernel = a.kernel.kernel()?.ok_or_else(|| Error::InvalidArgument("--cov is required".into()))?;
    let k = a.kernel.kl_terms.ok_or_else(|| Error::InvalidArgument("--kl-terms is required".into()))?;
    let mut cfg = McConfig::new(a.n, kernel, k, a.realizations, a.seed);
    cfg.forcing = a.solver.forcing;
    cfg.pcg = a.solver.pcg()?;
    cfg.method = a.solver.method;
    cfg.validate()?;
    if a.threads == Some(0) {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let k_ref = a.reference_terms.unwrap_or(k);
    if k_ref < k {
        return Err(Error::InvalidArgument(format!("--reference-terms must be at least {k}")));
    }

    let mesh = Mesh::new(a.n)?;
    let factors = NaturalFactors::new(&mesh);
    let h = build_h(&mesh, &factors, cfg.method)?;
    let kl = build_kl(&mesh, &kernel, k_ref)?;
    let mut summary = run_mc_threads(&cfg, &h, &kl, a.threads)?;
    if a.reference_terms.is_some() {
        let r_ref = a.reference_realizations.unwrap_or(a.realizations);
        let reference = with_threads(a.threads, || reference_solution_with(&cfg, &h, &kl, k_ref, r_ref))?;
        summary.h1_error = Some(broken_h1_seminorm(&factors.g_cr, &summary.mean_solution, &reference)?);
    }
    write_summary_json(&a.out_summary, &summary)?;
    write_samples_csv(&a.out_samples, &summary.records)?;
    println!(
        "condition mean={:.4} var={:.4}; iterations mean={:.3} var={:.3}; contrast mean={:.3} var={:.3}; nonconverged={}",
        summary.condition.mean,
        summary.condition.variance,
        summary.iterations.mean,
        summary.iterations.variance,
        summary.contrast.mean,
        summary.contrast.variance,
        summary.nonconverged
    );
    if let Some(e) = summary.h1_error {
        println!("h1 error vs reference={e:.6e}");
    }
    Ok(())
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    check_n(a.n)?;
    let mesh = Mesh::new(a.n)?;
    let factors = NaturalFactors::new(&mesh);
    match a.matrix {
        MatrixKind::G => save_sparse(&a.out, &factors.g_cr),
        MatrixKind::C => save_sparse(&a.out, &factors.c_tilde),
        MatrixKind::H => save_dense(&a.out, &assemble_h(&factors)?),
        MatrixKind::Acr => {
            let kappa = match a.field.sample(&mesh)? {
                Some((s, _)) => s.kappa_per_triangle,
                None => vec![1.0; mesh.num_triangles()],
            };
            let d = coefficient_diagonal(&mesh, &kappa)?;
            save_sparse(&a.out, &assemble_stiffness(&factors.g_cr, &d)?)
        }
    }
}
