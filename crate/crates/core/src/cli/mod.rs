//! Command-line front end: problem files, the `solve`, `check`, `bench` and
//! `oracle` commands, and their reports.

pub mod problem_file;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::descent::{local_descent, DescentOptions};
use crate::error::CqrError;
use crate::instances::{random_instance, GENERATOR};
use crate::oracle::{self, ConditionStatus, ORACLE_LIMIT};
use crate::pipeline::{solve_global, GlobalSolution, SolveOptions};
use crate::sdp::SolveMode;
use crate::CqrProblem;

use problem_file::{parse_point, parse_problem, ProblemFile};
use report::{sci_vec, BaselineReport, BenchReport, BenchRow, CheckReport, OracleReport, Sci, SolveReport, StatsReport};

pub const VERSION: &str = concat!("cqr ", env!("CARGO_PKG_VERSION"));

pub mod exit {
    pub const TIGHT: i32 = 0;
    pub const SOLVER_FAILURE: i32 = 1;
    pub const NOT_TIGHT: i32 = 2;
    pub const INPUT_ERROR: i32 = 3;
    pub const UNBOUNDED: i32 = 4;
    pub const ORACLE_LIMIT: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "cqr", version, about = "Global solver for cubic-quartic regularized quadratic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random instances and sampled set members.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Dense,
    Eigen,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file globally and report the verdict.
    Solve(SolveArgs),
    /// Check the global optimality conditions at a given point.
    Check(CheckArgs),
    /// Solve seeded random instances and tabulate timings and errors.
    Bench(BenchArgs),
    /// Solve a problem file with the one-dimensional reference method.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    /// Relative duality-gap tolerance of the interior-point method.
    #[arg(long, default_value_t = 1e-9)]
    pub tol_gap: f64,
    /// Relative singular-value threshold for numerical ranks.
    #[arg(long, default_value_t = 1e-7)]
    pub tol_rank: f64,
    /// Dense solves the full relaxation; eigen works in the eigenbasis of H
    /// and scales to larger n.
    #[arg(long, value_enum, default_value_t = Mode::Dense)]
    pub mode: Mode,
}

impl SolverFlags {
    pub fn options(&self) -> SolveOptions {
        let mut opts = SolveOptions::default();
        opts.ipm.tol_gap = self.tol_gap;
        opts.ipm.mode = match self.mode {
            Mode::Dense => SolveMode::Dense,
            Mode::Eigen => SolveMode::Eigen,
        };
        opts.extract.tol_rank = self.tol_rank;
        opts
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem file (TOML).
    pub problem: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Also run plain gradient descent from the point in this file.
    #[arg(long)]
    pub descent_from: Option<PathBuf>,
    /// Number of sampled members to list when the set is a sphere.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Problem file (TOML).
    pub problem: PathBuf,
    /// Point file holding `s = [...]`.
    pub point: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated problem sizes.
    #[arg(long = "n", value_delimiter = ',', default_value = "2,3")]
    pub sizes: Vec<usize>,
    /// Comma-separated values of the cubic coefficient.
    #[arg(long = "beta", value_delimiter = ',', allow_hyphen_values = true, default_value = "10,1,0,-1,-10,-100")]
    pub betas: Vec<f64>,
    /// Random instances per (n, beta) pair.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Problem file (TOML).
    pub problem: PathBuf,
}

/// A failure with its exit code and message.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: exit::INPUT_ERROR, message: message.into() }
    }

    fn solver(e: CqrError) -> Self {
        let code = match e {
            CqrError::UnboundedBelow => exit::UNBOUNDED,
            CqrError::OracleLimit { .. } => exit::ORACLE_LIMIT,
            _ => exit::SOLVER_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Runs a parsed command line, writing the report to `out` (or `--out`) and
/// errors to `err`. Returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, cli),
        Command::Check(a) => cmd_check(a, cli),
        Command::Bench(a) => cmd_bench(a, cli),
        Command::Oracle(a) => cmd_oracle(a, cli),
    };
    let (text, code) = match result {
        Ok(v) => v,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            return f.code;
        }
    };
    let written = match &cli.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        let _ = writeln!(err, "error: {e}");
        return exit::INPUT_ERROR;
    }
    code
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

fn load_problem(path: &Path) -> Result<(ProblemFile, String), Failure> {
    let text = read(path)?;
    let file = parse_problem(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok((file, digest(&text)))
}

fn load_point(path: &Path, n: usize) -> Result<DVector<f64>, Failure> {
    let text = read(path)?;
    let s = parse_point(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if s.len() != n {
        return Err(Failure::input(format!("{}: point has {} entries, problem has n = {n}", path.display(), s.len())));
    }
    Ok(s)
}

fn render<T: serde::Serialize>(format: Format, report: &T, text: impl FnOnce(&T) -> String) -> String {
    match format {
        Format::Machine => report::to_json(report),
        Format::Text => text(report),
    }
}

fn mode_name(mode: SolveMode) -> String {
    match mode {
        SolveMode::Dense => "dense".into(),
        SolveMode::Eigen => "eigen".into(),
    }
}

/// Builds the solve report for a finished pipeline run.
pub fn solve_report(sol: &GlobalSolution, n: usize, id: Option<String>, input_digest: String, seed: u64, samples: usize) -> SolveReport {
    let r = &sol.report;
    let set = &sol.set;
    let members = if samples > 0 { set.sample(samples, seed).iter().map(sci_vec).collect() } else { Vec::new() };
    SolveReport {
        tool_version: VERSION.into(),
        input_digest,
        id,
        seed,
        n,
        gamma_star: Sci(r.gamma_star),
        gamma_ipm: Sci(r.gamma_ipm),
        theta_star: Sci(r.theta_star),
        mu_upper: Sci(r.mu_upper),
        err_abs: Sci(r.err_abs),
        err_rel: r.err_rel.map(Sci),
        tight: r.tight,
        reason: r.reason.to_string(),
        condition_value: r.condition_value.map(Sci),
        s_star: r.s_star.as_ref().map(sci_vec),
        z_star: set.z_star.map(Sci),
        contains_zero: set.contains_zero,
        particular: set.particular_point().as_ref().map(sci_vec),
        nullspace_dim: set.nullspace_dim(),
        radius: Sci(set.radius),
        members,
        stats: StatsReport {
            mode: mode_name(sol.stats.mode),
            iterations: sol.stats.iterations,
            gap: Sci(sol.stats.gap),
            primal_infeas: Sci(sol.residuals.primal_infeas),
            dual_infeas: Sci(sol.residuals.dual_infeas),
            wall_time: Sci(sol.stats.wall_time),
        },
        baseline: None,
        diagnostics: r.diagnostics.clone(),
    }
}

fn cmd_solve(a: &SolveArgs, cli: &Cli) -> Result<(String, i32), Failure> {
    let (file, input_digest) = load_problem(&a.problem)?;
    let p = &file.problem;
    let start = a.descent_from.as_deref().map(|path| load_point(path, p.dim())).transpose()?;
    let sol = solve_global(p, &a.solver.options()).map_err(Failure::solver)?;
    let mut rep = solve_report(&sol, p.dim(), file.id.clone(), input_digest, cli.seed, a.samples);
    if let Some(s0) = start {
        let d = local_descent(p, &s0, &DescentOptions::default()).map_err(Failure::solver)?;
        rep.baseline = Some(BaselineReport {
            start: sci_vec(&s0),
            point: sci_vec(&d.point),
            value: Sci(d.value),
            grad_norm: Sci(d.grad_norm),
            iterations: d.iterations,
        });
    }
    let code = if rep.tight { exit::TIGHT } else { exit::NOT_TIGHT };
    Ok((render(cli.format, &rep, SolveReport::to_text), code))
}

fn cmd_check(a: &CheckArgs, cli: &Cli) -> Result<(String, i32), Failure> {
    let (file, input_digest) = load_problem(&a.problem)?;
    let p = &file.problem;
    let s = load_point(&a.point, p.dim())?;
    let c = oracle::verify_global(p, &s).map_err(Failure::solver)?;
    let rep = CheckReport {
        tool_version: VERSION.into(),
        input_digest,
        point: sci_vec(&s),
        value: Sci(p.evaluate(&s).map_err(Failure::solver)?),
        stationarity_residual: Sci(c.stationarity_residual),
        stationarity: c.stationarity,
        curvature: Sci(c.curvature),
        curvature_ok: c.curvature_ok,
        norm_margin: Sci(c.norm_margin),
        norm_condition: match c.norm_condition {
            ConditionStatus::Holds => "holds",
            ConditionStatus::Fails => "fails",
            ConditionStatus::NotApplicable => "not-applicable",
        }
        .into(),
        certified: c.certified,
        unique: c.unique,
    };
    let code = if c.certified { exit::TIGHT } else { exit::NOT_TIGHT };
    Ok((render(cli.format, &rep, CheckReport::to_text), code))
}

fn cmd_oracle(a: &OracleArgs, cli: &Cli) -> Result<(String, i32), Failure> {
    let (file, input_digest) = load_problem(&a.problem)?;
    let p = &file.problem;
    if p.dim() > ORACLE_LIMIT {
        return Err(Failure::solver(CqrError::OracleLimit { n: p.dim(), limit: ORACLE_LIMIT }));
    }
    let o = oracle::solve_1d(p).map_err(Failure::solver)?;
    let rep = OracleReport {
        tool_version: VERSION.into(),
        input_digest,
        mu_star: Sci(o.mu_star),
        radii: o.radii.iter().map(|&r| Sci(r)).collect(),
        minimizers: o.minimizers.iter().map(sci_vec).collect(),
        hard_case: o.hard_case,
    };
    Ok((render(cli.format, &rep, OracleReport::to_text), exit::TIGHT))
}

/// Outcome of one bench instance.
#[derive(Debug, Clone)]
struct InstanceResult {
    time: f64,
    tight: bool,
    err_abs: f64,
    err_reference: f64,
}

fn bench_instance(p: &CqrProblem, opts: &SolveOptions, seed: u64, index: u64) -> Result<InstanceResult, CqrError> {
    let start = Instant::now();
    let sol = solve_global(p, opts)?;
    let time = start.elapsed().as_secs_f64();
    let r = &sol.report;
    let err_reference = if p.dim() <= ORACLE_LIMIT {
        let o = oracle::solve_1d(p)?;
        if r.tight {
            (r.gamma_star - o.mu_star).abs()
        } else {
            (r.gamma_star - o.mu_star).max(0.0)
        }
    } else {
        // Weak duality: no sampled point may beat the lower bound.
        let s = r.s_star.clone().unwrap_or_else(|| DVector::zeros(p.dim()));
        let scale = 1.0 + s.norm();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        rng.set_stream(index);
        let mut lowest = p.evaluate(&s)?;
        for _ in 0..100 {
            let d = DVector::from_fn(p.dim(), |_, _| StandardNormal.sample(&mut rng)) * (scale / (p.dim() as f64).sqrt());
            lowest = lowest.min(p.evaluate(&(&s + d))?);
        }
        (r.gamma_star - lowest).max(0.0)
    };
    Ok(InstanceResult { time, tight: r.tight, err_abs: r.err_abs, err_reference })
}

fn cmd_bench(a: &BenchArgs, cli: &Cli) -> Result<(String, i32), Failure> {
    if a.sizes.contains(&0) || a.threads == 0 {
        return Err(Failure::input("sizes and thread count must be positive"));
    }
    let opts = a.solver.options();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Failure::input(format!("cannot start {} threads: {e}", a.threads)))?;
    let mut rows = Vec::new();
    for &n in a.sizes.iter().filter(|_| a.instances > 0) {
        for &beta in &a.betas {
            let jobs: Vec<u64> = (0..a.instances as u64).collect();
            let results: Vec<Result<InstanceResult, CqrError>> = pool.install(|| {
                jobs.par_iter()
                    .map(|&i| bench_instance(&random_instance(n, beta, cli.seed, i), &opts, cli.seed, i))
                    .collect()
            });
            let ok: Vec<&InstanceResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let tight: Vec<&&InstanceResult> = ok.iter().filter(|r| r.tight).collect();
            let max = |v: &mut dyn Iterator<Item = f64>| v.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            rows.push(BenchRow {
                n,
                beta: Sci(beta),
                instances: a.instances,
                solved: ok.len(),
                failures: results.len() - ok.len(),
                tight: tight.len(),
                mean_time: Sci(if ok.is_empty() { 0.0 } else { ok.iter().map(|r| r.time).sum::<f64>() / ok.len() as f64 }),
                reference: if n <= ORACLE_LIMIT { "oracle" } else { "samples" }.into(),
                max_err_reference: max(&mut ok.iter().map(|r| r.err_reference)).map(Sci),
                max_err_abs: max(&mut tight.iter().map(|r| r.err_abs)).map(Sci),
            });
        }
    }
    let rep = BenchReport {
        tool_version: VERSION.into(),
        generator: GENERATOR.into(),
        seed: cli.seed,
        mode: mode_name(opts.ipm.mode),
        threads: a.threads,
        rows,
    };
    let failed = rep.rows.iter().any(|r| r.failures > 0);
    Ok((render(cli.format, &rep, BenchReport::to_text), if failed { exit::SOLVER_FAILURE } else { exit::TIGHT }))
}
