//! The moment relaxation and its sum-of-squares dual.
//!
//! Primal (moments): `Y` of order `n+1`, `Z1` of order 3, `Z2` of order 2,
//! minimizing `C_Y • Y + (β/6)(Z2)₂₂ + (σ/4)(Z1)₃₃` subject to eight linear
//! functionals. Indices here are 0-based, so `(Z1)₃₃` is `z1[(2, 2)]`.
//!
//! Dual (certificate): `γ` and PSD blocks `X0`, `X1`, `X2` with
//!
//! ```text
//! M(s) − γ = [s]₁ᵀ X0 [s]₁ + [1,z,z²] X1 [1,z,z²]ᵀ + z [1,z] X2 [1,z]ᵀ,   z = ‖s‖
//! ```

mod engine;
mod formulation;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{CqrError, Result};
use crate::linalg;
use crate::model::CqrProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MomentBlock {
    Y,
    Z1,
    Z2,
}

/// `Σ coef · block[p, q] = rhs`, each off-diagonal entry counted once.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub terms: Vec<(MomentBlock, usize, usize, f64)>,
    pub rhs: f64,
}

impl Functional {
    fn eval(&self, y: &DMatrix<f64>, z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> f64 {
        self.terms
            .iter()
            .map(|&(b, p, q, c)| {
                let m = match b {
                    MomentBlock::Y => y,
                    MomentBlock::Z1 => z1,
                    MomentBlock::Z2 => z2,
                };
                c * 0.5 * (m[(p, q)] + m[(q, p)])
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Moment matrix `Y` kept as one dense block.
    Dense,
    /// Rotate by the eigenvectors of `H`; `Y` only enters through its
    /// first row and diagonal, so it splits into `n` blocks of order 2.
    Eigen,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Dense => "dense",
            SolveMode::Eigen => "eigen",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmConfig {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
    /// After the tolerances are met, iterate further towards this relative
    /// accuracy and keep the best iterate; 0 stops at the tolerances.
    pub refine: f64,
    pub mode: SolveMode,
}

impl Default for IpmConfig {
    fn default() -> Self {
        IpmConfig { tol_gap: 1e-9, tol_feas: 1e-9, max_iter: 200, step_fraction: 0.98, refine: 1e-13, mode: SolveMode::Dense }
    }
}

/// Assembled relaxation data.
#[derive(Debug, Clone)]
pub struct SdpData {
    pub problem: CqrProblem,
    pub cost_y: DMatrix<f64>,
    pub cost_z1: DMatrix<f64>,
    pub cost_z2: DMatrix<f64>,
    /// All eight functionals, in their listed order.
    pub functionals: Vec<Functional>,
    /// Maximal independent subset actually imposed by the solver.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpPrimal {
    pub y: DMatrix<f64>,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
    pub theta: f64,
}

impl SdpPrimal {
    /// `(Y₁₀, …, Y_n0)`, the first-order moments.
    pub fn first_moment(&self) -> DVector<f64> {
        let n = self.y.nrows() - 1;
        DVector::from_fn(n, |i, _| self.y[(i + 1, 0)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpDual {
    pub gamma: f64,
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative duality gap `|ϑ − γ| / (1 + |ϑ| + |γ|)`.
    pub gap: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    /// Seconds.
    pub wall_time: f64,
    pub mode: SolveMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// Largest violation of the eight functionals.
    pub primal_infeas: f64,
    /// Largest coefficient mismatch in the certificate identity.
    pub dual_infeas: f64,
    /// `ϑ − γ`.
    pub gap: f64,
    pub primal_min_eig: f64,
    pub dual_min_eig: f64,
}

fn functionals(n: usize) -> Vec<Functional> {
    use MomentBlock::{Y, Z1, Z2};
    let trace = |extra: (MomentBlock, usize, usize, f64)| {
        let mut terms = vec![extra];
        terms.extend((1..=n).map(|i| (Y, i, i, -1.0)));
        Functional { terms, rhs: 0.0 }
    };
    let pair = |a: (MomentBlock, usize, usize), b: (MomentBlock, usize, usize)| Functional {
        terms: vec![(a.0, a.1, a.2, 1.0), (b.0, b.1, b.2, -1.0)],
        rhs: 0.0,
    };
    vec![
        Functional { terms: vec![(Y, 0, 0, 1.0)], rhs: 1.0 },
        pair((Z1, 0, 0), (Y, 0, 0)),
        pair((Z1, 0, 1), (Z2, 0, 0)),
        pair((Z1, 1, 1), (Z2, 0, 1)),
        pair((Z1, 0, 2), (Z2, 0, 1)),
        pair((Z1, 1, 2), (Z2, 1, 1)),
        trace((Z1, 0, 2, 1.0)),
        trace((Z1, 1, 1, 1.0)),
    ]
}

/// Greedy Gram-Schmidt over the functionals in order; returns
/// `(kept, dropped)` indices.
fn independent_subset(funcs: &[Functional]) -> (Vec<usize>, Vec<usize>) {
    type Sparse = BTreeMap<(MomentBlock, usize, usize), f64>;
    let to_sparse = |f: &Functional| {
        let mut v = Sparse::new();
        for &(b, p, q, c) in &f.terms {
            *v.entry((b, p.min(q), p.max(q))).or_insert(0.0) += c;
        }
        v
    };
    let dot = |a: &Sparse, b: &Sparse| a.iter().map(|(k, x)| x * b.get(k).copied().unwrap_or(0.0)).sum::<f64>();
    let mut basis: Vec<Sparse> = Vec::new();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (i, f) in funcs.iter().enumerate() {
        let mut v = to_sparse(f);
        let norm0 = dot(&v, &v).sqrt();
        for q in &basis {
            let c = dot(&v, q);
            for (k, x) in q {
                *v.entry(*k).or_insert(0.0) -= c * x;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 * norm0.max(1.0) {
            v.values_mut().for_each(|x| *x /= norm);
            basis.push(v);
            kept.push(i);
        } else {
            dropped.push(i);
        }
    }
    (kept, dropped)
}

/// Builds the relaxation of a problem without a weight matrix.
pub fn assemble(problem: &CqrProblem) -> Result<SdpData> {
    if problem.w.is_some() {
        return Err(CqrError::InvalidInput("remove the weight matrix before assembling".into()));
    }
    let n = problem.dim();
    let mut cost_y = DMatrix::zeros(n + 1, n + 1);
    cost_y[(0, 0)] = problem.f0;
    for i in 0..n {
        cost_y[(0, i + 1)] = 0.5 * problem.g[i];
        cost_y[(i + 1, 0)] = 0.5 * problem.g[i];
        for j in 0..n {
            cost_y[(i + 1, j + 1)] = 0.5 * problem.h[(i, j)];
        }
    }
    let mut cost_z1 = DMatrix::zeros(3, 3);
    cost_z1[(2, 2)] = problem.sigma / 4.0;
    let mut cost_z2 = DMatrix::zeros(2, 2);
    cost_z2[(1, 1)] = problem.beta / 6.0;
    let functionals = functionals(n);
    let (kept, dropped) = independent_subset(&functionals);
    Ok(SdpData { problem: problem.clone(), cost_y, cost_z1, cost_z2, functionals, kept, dropped })
}

impl SdpData {
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Objective of the moment problem at arbitrary blocks.
    pub fn moment_objective(&self, y: &DMatrix<f64>, z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> f64 {
        self.cost_y.dot(y) + self.cost_z1.dot(z1) + self.cost_z2.dot(z2)
    }

    /// Rank-one moments of a point: `Y = [s]₁[s]₁ᵀ`, `Z1 = [1,z,z²]ᵀ[1,z,z²]`,
    /// `Z2 = z[1,z]ᵀ[1,z]` with `z = ‖s‖`.
    pub fn lift(&self, s: &DVector<f64>) -> SdpPrimal {
        let n = self.dim();
        let mut v = DVector::zeros(n + 1);
        v[0] = 1.0;
        v.rows_mut(1, n).copy_from(s);
        let z = s.norm();
        let w = DVector::from_vec(vec![1.0, z, z * z]);
        let u = DVector::from_vec(vec![1.0, z]);
        let y = &v * v.transpose();
        let z1 = &w * w.transpose();
        let z2 = &u * u.transpose() * z;
        let theta = self.moment_objective(&y, &z1, &z2);
        SdpPrimal { y, z1, z2, theta }
    }

    /// Violations of all eight functionals.
    pub fn functional_residuals(&self, primal: &SdpPrimal) -> Vec<f64> {
        self.functionals
            .iter()
            .map(|f| f.eval(&primal.y, &primal.z1, &primal.z2) - f.rhs)
            .collect()
    }

    /// Coefficient mismatches of the certificate identity, in the order:
    /// constant, `z`, `z³`, `z⁴`, then `sᵢ`, `sᵢ²`, `sᵢsⱼ`.
    pub fn certificate_residuals(&self, dual: &SdpDual) -> Vec<f64> {
        let p = &self.problem;
        let n = p.dim();
        let (x0, x1, x2) = (&dual.x0, &dual.x1, &dual.x2);
        let c2 = 2.0 * x1[(0, 2)] + x1[(1, 1)] + 2.0 * x2[(0, 1)];
        let mut out = vec![
            x0[(0, 0)] + x1[(0, 0)] - (p.f0 - dual.gamma),
            2.0 * x1[(0, 1)] + x2[(0, 0)],
            2.0 * x1[(1, 2)] + x2[(1, 1)] - p.beta / 6.0,
            x1[(2, 2)] - p.sigma / 4.0,
        ];
        for i in 0..n {
            out.push(2.0 * x0[(0, i + 1)] - p.g[i]);
        }
        for i in 0..n {
            out.push(x0[(i + 1, i + 1)] + c2 - 0.5 * p.h[(i, i)]);
        }
        for i in 0..n {
            for j in i + 1..n {
                out.push(2.0 * x0[(i + 1, j + 1)] - p.h[(i, j)]);
            }
        }
        out
    }
}

/// Wall clock that reads zero on `wasm32-unknown-unknown`, where
/// `Instant::now` panics.
struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        return 0.0;
    }
}

/// Solves the relaxation pair with the interior-point method.
pub fn ipm_solve(data: &SdpData, config: &IpmConfig) -> Result<(SdpPrimal, SdpDual, SolveStats)> {
    let start = Stopwatch::start();
    let p = &data.problem;
    let rho_x = 1.0 + p.g.norm() + p.h.norm();
    let rho_s = 1.0 + p.f0.abs() + p.g.norm() + p.h.norm() + p.beta.abs() + p.sigma;
    let settings = engine::Settings {
        tol_gap: config.tol_gap,
        tol_feas: config.tol_feas,
        max_iter: config.max_iter,
        step_fraction: config.step_fraction,
        refine: config.refine,
    };
    let (primal, dual, stats) = match config.mode {
        SolveMode::Dense => {
            let f = formulation::Dense::new(data);
            let (it, stats) = engine::solve(&f.sdp, &settings, rho_x, rho_s)?;
            let (pr, du) = f.recover(data, &it);
            (pr, du, stats)
        }
        SolveMode::Eigen => {
            let f = formulation::Eigen::new(data)?;
            let (it, stats) = engine::solve(&f.sdp, &settings, rho_x, rho_s)?;
            let (pr, du) = f.recover(data, &it);
            (pr, du, stats)
        }
    };
    let stats = SolveStats {
        iterations: stats.iterations,
        gap: stats.rel_gap,
        primal_infeas: stats.pinf,
        dual_infeas: stats.dinf,
        wall_time: start.seconds(),
        mode: config.mode,
    };
    Ok((primal, dual, stats))
}

/// Recomputes feasibility and gap from the original formulation.
pub fn residuals(data: &SdpData, primal: &SdpPrimal, dual: &SdpDual) -> Result<Residuals> {
    let max_abs = |v: Vec<f64>| v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let theta = data.moment_objective(&primal.y, &primal.z1, &primal.z2);
    let primal_min_eig = linalg::min_psd_eig(&primal.y)?
        .min(linalg::min_psd_eig(&primal.z1)?)
        .min(linalg::min_psd_eig(&primal.z2)?);
    let dual_min_eig = linalg::min_psd_eig(&dual.x0)?
        .min(linalg::min_psd_eig(&dual.x1)?)
        .min(linalg::min_psd_eig(&dual.x2)?);
    Ok(Residuals {
        primal_infeas: max_abs(data.functional_residuals(primal)),
        dual_infeas: max_abs(data.certificate_residuals(dual)),
        gap: theta - dual.gamma,
        primal_min_eig,
        dual_min_eig,
    })
}
