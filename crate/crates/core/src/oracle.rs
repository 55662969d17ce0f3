//! Ground-truth solvers that do not touch the relaxation.
//!
//! The minimum over the sphere `‖s‖ = r` of the quadratic part is a
//! trust-region equality subproblem, so the whole problem collapses to the
//! one-dimensional `ψ(r) = φ(r) + (β/6)r³ + (σ/4)r⁴`.

use nalgebra::DVector;

use crate::descent::{local_descent, DescentOptions};
use crate::error::{CqrError, Result};
use crate::linalg::{self, EigenDecomp};
use crate::model::CqrProblem;

/// Largest dimension accepted by the command-line oracle.
pub const ORACLE_LIMIT: usize = 100;
/// Largest dimension accepted by [`grid_oracle`].
pub const GRID_LIMIT: usize = 3;

const SAMPLES: usize = 2048;
const REFINE_PASSES: usize = 3;
const POLISH: DescentOptions = DescentOptions { max_iter: 500, tol_grad: 1e-13, newton: true };

#[derive(Debug, Clone, PartialEq)]
pub struct SphereMin {
    pub value: f64,
    pub point: DVector<f64>,
    /// Multiplier `λ` with `(H + λI)s = −g`.
    pub multiplier: f64,
    /// The minimizer needed a component along the bottom eigenvector; the
    /// point with that component negated is also a minimizer.
    pub hard_case: bool,
}

/// Sphere-constrained minimization of `f0 + gᵀs + ½sᵀHs`, with `H`
/// diagonalized once.
#[derive(Debug, Clone)]
pub struct SphereSolver {
    f0: f64,
    eig: EigenDecomp,
    ghat: DVector<f64>,
    /// Indices of the eigenvalues equal to the smallest one.
    bottom: Vec<usize>,
    hard: bool,
    /// `‖(Λ − λ₁I)⁺ ĝ‖` over the remaining indices, valid in the hard case.
    hard_radius: f64,
}

impl SphereSolver {
    pub fn new(problem: &CqrProblem) -> Result<Self> {
        if problem.w.is_some() {
            return Err(CqrError::InvalidInput("remove the weight matrix first".into()));
        }
        let eig = linalg::sym_eigen(&problem.h)?;
        let ghat = eig.vectors.transpose() * &problem.g;
        let l1 = eig.values[0];
        let scale = eig.values.amax().max(1.0);
        let bottom: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] - l1 <= 1e-12 * scale).collect();
        let gtol = 1e-13 * (1.0 + problem.g.norm());
        let hard = bottom.iter().all(|&i| ghat[i].abs() <= gtol);
        let hard_radius = (0..ghat.len())
            .filter(|i| !bottom.contains(i))
            .map(|i| (ghat[i] / (eig.values[i] - l1)).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(SphereSolver { f0: problem.f0, eig, ghat, bottom, hard, hard_radius })
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig.values[0]
    }

    fn value_rotated(&self, shat: &DVector<f64>) -> f64 {
        self.f0
            + self.ghat.dot(shat)
            + 0.5 * shat.iter().zip(self.eig.values.iter()).map(|(x, l)| l * x * x).sum::<f64>()
    }

    fn norm_at(&self, lambda: f64) -> f64 {
        self.ghat
            .iter()
            .zip(self.eig.values.iter())
            .map(|(g, l)| (g / (l + lambda)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Root of `‖(Λ + λI)⁻¹ĝ‖ = r` on `λ > −λ₁`: Newton on `1/‖·‖ − 1/r`
    /// safeguarded by bisection.
    fn secular(&self, r: f64) -> f64 {
        let l1 = self.lambda_min();
        let mut lo = -l1 + 1e-14 * (1.0 + l1.abs());
        let mut hi = -l1 + self.ghat.norm() / r + 1e-14 * (1.0 + l1.abs());
        if self.norm_at(lo) <= r {
            return lo;
        }
        let mut lam = hi;
        for _ in 0..200 {
            let nrm = self.norm_at(lam);
            if nrm > r {
                lo = lam;
            } else {
                hi = lam;
            }
            // d‖s‖/dλ = −Σ ĝᵢ²/(λᵢ+λ)³ / ‖s‖
            let d3: f64 = self
                .ghat
                .iter()
                .zip(self.eig.values.iter())
                .map(|(g, l)| g * g / (l + lam).powi(3))
                .sum();
            let f = 1.0 / nrm - 1.0 / r;
            let df = d3 / (nrm * nrm * nrm);
            let mut next = lam - f / df;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - lam).abs() <= 1e-15 * (1.0 + lam.abs()) || hi - lo <= 1e-15 * (1.0 + lam.abs()) {
                return next;
            }
            lam = next;
        }
        lam
    }

    /// `φ(r)` and a minimizer over `‖s‖ = r`.
    pub fn solve(&self, r: f64) -> Result<SphereMin> {
        if !(r >= 0.0) {
            return Err(CqrError::InvalidInput(format!("radius must be nonnegative, got {r}")));
        }
        let n = self.ghat.len();
        if r == 0.0 {
            return Ok(SphereMin {
                value: self.f0,
                point: DVector::zeros(n),
                multiplier: -self.lambda_min(),
                hard_case: false,
            });
        }
        let l1 = self.lambda_min();
        let (shat, lam, hard_case) = if self.hard && self.hard_radius < r {
            let mut shat = DVector::zeros(n);
            for i in 0..n {
                if !self.bottom.contains(&i) {
                    shat[i] = -self.ghat[i] / (self.eig.values[i] - l1);
                }
            }
            shat[self.bottom[0]] = (r * r - self.hard_radius * self.hard_radius).max(0.0).sqrt();
            (shat, -l1, true)
        } else {
            let lam = self.secular(r);
            let shat = DVector::from_fn(n, |i, _| -self.ghat[i] / (self.eig.values[i] + lam));
            // Rescale away the last rounding error in the norm.
            let nrm = shat.norm();
            let shat = if nrm > 0.0 { shat * (r / nrm) } else { shat };
            (shat, lam, false)
        };
        Ok(SphereMin {
            value: self.value_rotated(&shat),
            point: &self.eig.vectors * &shat,
            multiplier: lam,
            hard_case,
        })
    }

    /// The reflected hard-case minimizer.
    fn mirror(&self, m: &SphereMin) -> DVector<f64> {
        let v = self.eig.vectors.column(self.bottom[0]);
        let alpha = v.dot(&m.point);
        &m.point - v * (2.0 * alpha)
    }
}

/// `φ(r) = min { f0 + gᵀs + ½sᵀHs : ‖s‖ = r }` and an argmin.
pub fn phi_on_sphere(problem: &CqrProblem, r: f64) -> Result<(f64, DVector<f64>)> {
    let m = SphereSolver::new(problem)?.solve(r)?;
    Ok((m.value, m.point))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub mu_star: f64,
    /// Representatives of the global minimizers.
    pub minimizers: Vec<DVector<f64>>,
    /// Distinct norms of the minimizers, ascending.
    pub radii: Vec<f64>,
    /// Some minimizer lies on a sphere component (the bottom eigenspace
    /// direction is free), so the list holds representatives only.
    pub hard_case: bool,
}

/// Radius beyond which `ψ(r) > f0 = ψ(0)`, from a Cauchy bound on the
/// positive roots of `−‖g‖ + ½λ₁r + (β/6)r² + (σ/4)r³`.
pub fn radius_bound(problem: &CqrProblem, lambda_min: f64) -> Result<f64> {
    let gn = problem.g.norm();
    let (lead, rest) = if problem.sigma > 0.0 {
        (problem.sigma / 4.0, [gn, 0.5 * lambda_min.abs(), problem.beta.abs() / 6.0])
    } else if problem.beta > 0.0 {
        (problem.beta / 6.0, [gn, 0.5 * lambda_min.abs(), 0.0])
    } else if problem.beta == 0.0 && lambda_min > 0.0 {
        (0.5 * lambda_min, [gn, 0.0, 0.0])
    } else {
        return Err(CqrError::UnboundedBelow);
    };
    Ok(1.0 + rest.iter().fold(0.0f64, |m, x| m.max(*x)) / lead)
}

struct Radial<'a> {
    problem: &'a CqrProblem,
    sphere: SphereSolver,
}

impl Radial<'_> {
    fn psi(&self, r: f64) -> Result<f64> {
        Ok(self.sphere.solve(r)?.value + self.problem.radial(r))
    }

    /// `ψ'(r)/r = −λ(r) + βr/2 + σr²`.
    fn slope(&self, r: f64) -> Result<f64> {
        let lam = self.sphere.solve(r)?.multiplier;
        Ok(-lam + 0.5 * self.problem.beta * r + self.problem.sigma * r * r)
    }

    fn golden(&self, mut a: f64, mut b: f64) -> Result<f64> {
        let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (self.psi(c)?, self.psi(d)?);
        while b - a > 1e-10 * (1.0 + b.abs()) {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.psi(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.psi(d)?;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Sharpens a near-minimizer to a sign change of `ψ'`.
    fn polish(&self, r: f64, width: f64) -> Result<f64> {
        if r <= 0.0 {
            return Ok(r);
        }
        let mut w = width.max(1e-12 * (1.0 + r));
        for _ in 0..40 {
            let (a, b) = ((r - w).max(0.0), r + w);
            if a > 0.0 {
                let (sa, sb) = (self.slope(a)?, self.slope(b)?);
                if sa <= 0.0 && sb >= 0.0 {
                    return self.bisect(a, b);
                }
            }
            w *= 2.0;
            if w > 1e-3 * (1.0 + r) {
                break;
            }
        }
        Ok(r)
    }

    fn bisect(&self, mut a: f64, mut b: f64) -> Result<f64> {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.slope(m)? < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Global minimization through the radial function `ψ`.
pub fn solve_1d(problem: &CqrProblem) -> Result<OracleResult> {
    if !problem.is_bounded_below() {
        return Err(CqrError::UnboundedBelow);
    }
    let sphere = SphereSolver::new(problem)?;
    let r_max = radius_bound(problem, sphere.lambda_min())?;
    let radial = Radial { problem, sphere };

    let h = r_max / (SAMPLES - 1) as f64;
    let grid: Vec<f64> = (0..SAMPLES).map(|k| k as f64 * h).collect();
    let vals: Vec<f64> = grid.iter().map(|&r| radial.psi(r)).collect::<Result<_>>()?;

    // Every sampled local minimum is refined; the grid spacing bounds how
    // close two separate minima can be and still be told apart.
    // The first cell is searched too: a minimizer closer to the origin than
    // the spacing leaves no interior sample minimum.
    let mut candidates = vec![0.0];
    for k in 0..SAMPLES {
        let left = if k > 0 { vals[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < SAMPLES { vals[k + 1] } else { f64::INFINITY };
        if vals[k] <= left && vals[k] <= right {
            let (mut a, mut b) = (grid[k.saturating_sub(1)], (grid[k] + h).min(r_max));
            let mut r = grid[k];
            for _ in 0..REFINE_PASSES {
                r = radial.golden(a, b)?;
                let w = 0.25 * (b - a);
                a = (r - w).max(0.0);
                b = r + w;
            }
            candidates.push(radial.polish(r, 1e-9 * (1.0 + r))?);
        }
    }

    let mut scored: Vec<(f64, f64)> = candidates.iter().map(|&r| Ok((radial.psi(r)?, r))).collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mu_star = scored[0].0;
    let tol = 1e-9 * (1.0 + mu_star.abs());
    let mut radii: Vec<f64> = Vec::new();
    for &(v, r) in &scored {
        if v - mu_star <= tol && radii.iter().all(|&q| (q - r).abs() > 1e-6 * (1.0 + r)) {
            radii.push(r);
        }
    }
    radii.sort_by(f64::total_cmp);

    let mut minimizers = Vec::new();
    let mut hard_case = false;
    for &r in &radii {
        let m = radial.sphere.solve(r)?;
        if m.hard_case {
            hard_case = true;
            minimizers.push(m.point.clone());
            minimizers.push(radial.sphere.mirror(&m));
        } else {
            minimizers.push(m.point);
        }
    }
    let mu_star = minimizers
        .iter()
        .map(|s| problem.evaluate(s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(OracleResult { mu_star, minimizers, radii, hard_case })
}

/// Brute-force grid search on `[−bound, bound]ⁿ` with `resolution` points
/// per axis, followed by local polishing of the best cells.
pub fn grid_oracle(problem: &CqrProblem, bound: f64, resolution: usize) -> Result<OracleResult> {
    let n = problem.dim();
    if n > GRID_LIMIT {
        return Err(CqrError::OracleLimit { n, limit: GRID_LIMIT });
    }
    if !problem.is_bounded_below() {
        return Err(CqrError::UnboundedBelow);
    }
    if resolution < 2 || !(bound > 0.0) {
        return Err(CqrError::InvalidInput("grid needs a positive bound and at least 2 points".into()));
    }
    let step = 2.0 * bound / (resolution - 1) as f64;
    let total = resolution.pow(n as u32);
    let mut best: Vec<(f64, usize)> = Vec::new();
    const KEEP: usize = 8;
    let point = |mut idx: usize| {
        DVector::from_fn(n, |_, _| {
            let k = idx % resolution;
            idx /= resolution;
            -bound + k as f64 * step
        })
    };
    for idx in 0..total {
        let v = problem.evaluate(&point(idx))?;
        if best.len() < KEEP || v < best[best.len() - 1].0 {
            let pos = best.partition_point(|&(b, j)| b < v || (b == v && j < idx));
            best.insert(pos, (v, idx));
            best.truncate(KEEP);
        }
    }
    let mut polished: Vec<(f64, DVector<f64>)> = Vec::new();
    for &(_, idx) in &best {
        let s = local_descent(problem, &point(idx), &POLISH)?.point;
        polished.push((problem.evaluate(&s)?, s));
    }
    polished.push((problem.f0, DVector::zeros(n)));
    polished.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mu_star = polished[0].0;
    let tol = 1e-7 * (1.0 + mu_star.abs());
    let mut minimizers: Vec<DVector<f64>> = Vec::new();
    for (v, s) in polished {
        if v - mu_star <= tol && minimizers.iter().all(|m| (m - &s).norm() > 1e-5 * (1.0 + s.norm())) {
            minimizers.push(s);
        }
    }
    let mut radii: Vec<f64> = Vec::new();
    for m in &minimizers {
        let r = m.norm();
        if radii.iter().all(|&q| (q - r).abs() > 1e-5 * (1.0 + r)) {
            radii.push(r);
        }
    }
    radii.sort_by(f64::total_cmp);
    Ok(OracleResult { mu_star, minimizers, radii, hard_case: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionStatus {
    Holds,
    Fails,
    NotApplicable,
}

/// Residuals of the global optimality conditions at a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCheck {
    /// `‖B(‖s‖)s + g‖ / (1 + ‖g‖)`.
    pub stationarity_residual: f64,
    pub stationarity: bool,
    /// `λmin(B(‖s‖))`.
    pub curvature: f64,
    pub curvature_ok: bool,
    /// `β + 3σ‖s‖`.
    pub norm_margin: f64,
    pub norm_condition: ConditionStatus,
    /// All three sufficient conditions hold.
    pub certified: bool,
    /// Certified, and `B ≻ 0` or `β > −3σ‖s‖`.
    pub unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckTolerances {
    pub stationarity: f64,
    pub curvature: f64,
    pub norm: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances { stationarity: 1e-7, curvature: 1e-8, norm: 1e-10 }
    }
}

pub fn verify_global(problem: &CqrProblem, s: &DVector<f64>) -> Result<GlobalCheck> {
    verify_global_with(problem, s, &CheckTolerances::default())
}

pub fn verify_global_with(problem: &CqrProblem, s: &DVector<f64>, tol: &CheckTolerances) -> Result<GlobalCheck> {
    if s.len() != problem.dim() {
        return Err(CqrError::DimensionMismatch { expected: problem.dim(), got: s.len() });
    }
    let r = s.norm();
    let b = problem.b_matrix(r)?;
    let stationarity_residual = (&b * s + &problem.g).norm() / (1.0 + problem.g.norm());
    let curvature = linalg::min_psd_eig(&b)?;
    let norm_margin = problem.beta + 3.0 * problem.sigma * r;
    let norm_condition = if r == 0.0 {
        ConditionStatus::NotApplicable
    } else if norm_margin >= -tol.norm {
        ConditionStatus::Holds
    } else {
        ConditionStatus::Fails
    };
    let stationarity = stationarity_residual <= tol.stationarity;
    let curvature_ok = curvature >= -tol.curvature;
    let certified = stationarity && curvature_ok && norm_condition == ConditionStatus::Holds;
    let unique = certified && (curvature > tol.curvature || norm_margin > tol.norm);
    Ok(GlobalCheck {
        stationarity_residual,
        stationarity,
        curvature,
        curvature_ok,
        norm_margin,
        norm_condition,
        certified,
        unique,
    })
}

/// Default search box for [`grid_oracle`].
pub fn grid_bound(problem: &CqrProblem) -> Result<f64> {
    let l1 = linalg::min_psd_eig(&problem.h)?;
    radius_bound(problem, l1)
}
