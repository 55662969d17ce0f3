//! Reading global minimizers off the dual optimum.
//!
//! Factoring the multiplier blocks gives
//!
//! ```text
//! M(s) − γ* = ‖R[s]₁‖² + p₁(z)² + p₂(z)² + z·(q₁(z)² + q₂(z)²),   z = ‖s‖
//! ```
//!
//! so the minimizers are exactly the solutions of `R[s]₁ = 0`,
//! `pᵢ(‖s‖) = 0` and `‖s‖·qⱼ(‖s‖) = 0`. The relaxation is tight if and only
//! if that system has a solution.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::descent::{local_descent, DescentOptions};
use crate::error::{CqrError, Result};
use crate::linalg;
use crate::model::CqrProblem;
use crate::sdp::{SdpDual, SdpPrimal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// Eigenvalues above `tol_rank·max(1, λmax)` count towards a rank.
    pub tol_rank: f64,
    /// Root matching and merging tolerance, relative to `1 + z`.
    pub tol_root: f64,
    /// Relative singular-value threshold for nullspaces and solves.
    pub tol_null: f64,
    /// Zero is a minimizer when `M(0) − γ* ≤ tol_zero·(1 + |γ*|)`.
    pub tol_zero: f64,
    /// Extracted points must satisfy `M(s) − γ* ≤ tol_member·(1 + |γ*|)`.
    pub tol_member: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { tol_rank: 1e-7, tol_root: 1e-6, tol_null: 1e-7, tol_zero: 1e-7, tol_member: 1e-6 }
    }
}

/// Factored dual optimum. Polynomial coefficients are stored lowest degree
/// first; absent factors are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub gamma: f64,
    /// `r × (n+1)` with `r = rank X0`.
    pub r: DMatrix<f64>,
    pub p: [[f64; 3]; 2],
    pub q: [[f64; 2]; 2],
    pub rank_x1: usize,
    pub rank_x2: usize,
}

fn horner(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * z + a)
}

impl Certificate {
    pub fn rank_r(&self) -> usize {
        self.r.nrows()
    }

    pub fn p_at(&self, i: usize, z: f64) -> f64 {
        horner(&self.p[i], z)
    }

    pub fn q_at(&self, j: usize, z: f64) -> f64 {
        horner(&self.q[j], z)
    }

    /// Right-hand side of the certificate identity at `s`.
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        let n = s.len();
        let mut v = DVector::zeros(n + 1);
        v[0] = 1.0;
        v.rows_mut(1, n).copy_from(s);
        let z = s.norm();
        let rs = &self.r * v;
        rs.norm_squared()
            + (0..2).map(|i| self.p_at(i, z).powi(2)).sum::<f64>()
            + z * (0..2).map(|j| self.q_at(j, z).powi(2)).sum::<f64>()
    }

    /// All univariate factors vanish identically, so the system places no
    /// constraint on `‖s‖`.
    pub fn is_radially_free(&self) -> bool {
        self.nonzero_polys().is_empty()
    }

    fn nonzero_polys(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for p in &self.p {
            if p.iter().any(|c| *c != 0.0) {
                out.push(p.to_vec());
            }
        }
        for q in &self.q {
            if q.iter().any(|c| *c != 0.0) {
                out.push(q.to_vec());
            }
        }
        out
    }

    /// `F(z) = Σ pᵢ(z)² + z Σ qⱼ(z)²` with its first two derivatives.
    fn residual_poly(&self, z: f64) -> (f64, f64, f64) {
        let mut f = (0.0, 0.0, 0.0);
        for p in &self.p {
            let (v, d, dd) = (horner(p, z), p[1] + 2.0 * p[2] * z, 2.0 * p[2]);
            f.0 += v * v;
            f.1 += 2.0 * v * d;
            f.2 += 2.0 * (d * d + v * dd);
        }
        for q in &self.q {
            let (v, d) = (horner(q, z), q[1]);
            f.0 += z * v * v;
            f.1 += v * v + 2.0 * z * v * d;
            f.2 += 4.0 * v * d + 2.0 * z * d * d;
        }
        f
    }
}

/// Scaled eigenvectors `√λ·v` of a PSD matrix, largest first, keeping
/// eigenvalues above `tol_rank·max(1, λmax)`.
fn psd_factors(m: &DMatrix<f64>, tol_rank: f64) -> Result<Vec<DVector<f64>>> {
    let eig = linalg::sym_eigen(m)?;
    let cut = tol_rank * eig.max().max(1.0);
    Ok((0..eig.values.len())
        .rev()
        .filter(|&i| eig.values[i] > cut)
        .map(|i| eig.vectors.column(i) * eig.values[i].sqrt())
        .collect())
}

/// Numerical rank under the same threshold as the factorization.
pub fn numerical_rank(m: &DMatrix<f64>, tol_rank: f64) -> Result<usize> {
    let vals = linalg::sym_eigenvalues(m)?;
    let cut = tol_rank * vals.max().max(1.0);
    Ok(vals.iter().filter(|&&v| v > cut).count())
}

/// Flips sign so the highest-degree significant coefficient is nonnegative.
fn orient_poly<const K: usize>(mut c: [f64; K]) -> [f64; K] {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(k) = (0..K).rev().find(|&k| c[k].abs() > 1e-12 * scale) {
        if c[k] < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
    }
    c
}

pub fn factor_dual(dual: &SdpDual, tol_rank: f64) -> Result<Certificate> {
    let rows = psd_factors(&dual.x0, tol_rank)?;
    let n1 = dual.x0.nrows();
    let mut r = DMatrix::zeros(rows.len(), n1);
    for (i, v) in rows.iter().enumerate() {
        r.set_row(i, &v.transpose());
    }

    let a = psd_factors(&dual.x1, tol_rank)?;
    if a.len() > 2 {
        return Err(CqrError::RankAnomaly { block: "X1", rank: a.len() });
    }
    let mut p = [[0.0; 3]; 2];
    for (i, v) in a.iter().enumerate() {
        p[i] = orient_poly([v[0], v[1], v[2]]);
    }

    let b = psd_factors(&dual.x2, tol_rank)?;
    let mut q = [[0.0; 2]; 2];
    for (j, v) in b.iter().enumerate() {
        q[j] = orient_poly([v[0], v[1]]);
    }
    Ok(Certificate { gamma: dual.gamma, r, p, q, rank_x1: a.len(), rank_x2: b.len() })
}

/// Real roots of `c₀ + c₁z + c₂z²`, plus the vertex of a quadratic. The
/// vertex stands in for a double root that rounding has split or pushed off
/// the real axis.
fn root_candidates(c: &[f64]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let lead = |x: f64| x.abs() > 1e-12 * scale;
    if c.len() == 3 && lead(c[2]) {
        let (c0, c1, c2) = (c[0], c[1], c[2]);
        let vertex = -c1 / (2.0 * c2);
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return vec![vertex];
        }
        let qv = -0.5 * (c1 + c1.signum() * disc.sqrt());
        let second = if qv != 0.0 { c0 / qv } else { 0.0 };
        vec![qv / c2, second, vertex]
    } else if lead(c[1]) {
        vec![-c[0] / c[1]]
    } else {
        Vec::new()
    }
}

/// Nonnegative common roots of the nonzero univariate factors, ascending.
///
/// Candidates are the roots (and vertices) of each factor, refined by Newton
/// on `F(z) = Σ pᵢ(z)² + z Σ qⱼ(z)²`. A candidate is kept when every factor
/// has a root within `tol_root·(1 + z)` of it, or when `F(z) ≤ tol_energy`.
/// `F(z)` is the value of `M − γ*` at any `s` with `‖s‖ = z` and `R[s]₁ = 0`,
/// so the second test accepts exactly the norms at which such points would be
/// minimizers to within `tol_energy`. Empty when nothing qualifies, or when
/// every factor vanishes identically (see [`Certificate::is_radially_free`]).
pub fn common_roots(cert: &Certificate, tol_root: f64, tol_energy: f64) -> Vec<f64> {
    let polys = cert.nonzero_polys();
    if polys.is_empty() {
        return Vec::new();
    }
    let roots: Vec<Vec<f64>> = polys.iter().map(|p| root_candidates(p)).collect();
    let near_roots = |z: f64| {
        polys.iter().zip(&roots).all(|(p, rs)| {
            let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
            horner(p, z).abs() <= tol_root * norm * (1.0 + z * z)
                || rs.iter().any(|r| (r - z).abs() <= tol_root * (1.0 + z.abs()))
        })
    };
    let mut found: Vec<f64> = Vec::new();
    for z in roots.iter().flatten() {
        if !z.is_finite() || *z < -tol_root {
            continue;
        }
        let z = polish_root(cert, z.max(0.0));
        if !(near_roots(z) || cert.residual_poly(z).0 <= tol_energy) {
            continue;
        }
        if found.iter().all(|f| (f - z).abs() > tol_root * (1.0 + z)) {
            found.push(z);
        }
    }
    found.sort_by(f64::total_cmp);
    found
}

/// Newton on `F′`, accepting only steps that decrease `F`.
fn polish_root(cert: &Certificate, z0: f64) -> f64 {
    let mut z = z0;
    let (mut f, _, _) = cert.residual_poly(z);
    for _ in 0..50 {
        let (_, d1, d2) = cert.residual_poly(z);
        if !(d2 > 0.0) {
            break;
        }
        let next = (z - d1 / d2).max(0.0);
        let (fn_, _, _) = cert.residual_poly(next);
        if !(fn_ <= f) {
            break;
        }
        let done = (next - z).abs() <= 1e-15 * (1.0 + z);
        z = next;
        f = fn_;
        if done {
            break;
        }
    }
    z
}

/// Whether the origin solves the system: `‖R e₀‖² + p₁(0)² + p₂(0)² ≤ tol`.
pub fn zero_membership(cert: &Certificate, tol: f64) -> bool {
    let re0 = if cert.r.nrows() > 0 { cert.r.column(0).norm_squared() } else { 0.0 };
    re0 + cert.p_at(0, 0.0).powi(2) + cert.p_at(1, 0.0).powi(2) <= tol
}

/// `{ŝ + Nc : ‖c‖ = radius}`, the solutions of `R[s]₁ = 0` with `‖s‖ = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereAffine {
    pub particular: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub radius: f64,
}

/// Solves `R[s]₁ = 0` on `‖s‖ = z_star`. When the affine set meets the
/// sphere in more than a point the result is `{ŝ + Nc : ‖c‖ = ρ}`, whose
/// members all have norm `z_star`. Otherwise only `ŝ` itself is a candidate,
/// and it is accepted when the certificate value there (equal to
/// `M(ŝ) − γ*`) is at most `tol_energy`.
pub fn solve_sphere_affine(cert: &Certificate, z_star: f64, tol_null: f64, tol_energy: f64) -> Option<SphereAffine> {
    let n = cert.r.ncols() - 1;
    let (particular, basis) = if cert.r.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let r0 = cert.r.column(0).into_owned();
        let rs = cert.r.columns(1, n).into_owned();
        let shat = linalg::min_norm_solve(&rs, &(-r0), tol_null).ok()?;
        (shat, linalg::nullspace(&rs, tol_null).basis)
    };
    let gap = z_star * z_star - particular.norm_squared();
    if basis.ncols() > 0 && gap > 0.0 {
        return Some(SphereAffine { particular, basis, radius: gap.sqrt() });
    }
    (cert.value(&particular) <= tol_energy).then(|| SphereAffine { particular, basis: DMatrix::zeros(n, 0), radius: 0.0 })
}

/// The extracted set of global minimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerSet {
    pub contains_zero: bool,
    pub z_star: Option<f64>,
    /// `ŝ`, orthogonal to every basis column.
    pub particular: Option<DVector<f64>>,
    /// Orthonormal columns spanning the free directions (may be empty).
    pub basis: DMatrix<f64>,
    pub radius: f64,
    /// Linear map from the coordinates above to the caller's variables;
    /// `None` for the identity.
    pub transform: Option<DMatrix<f64>>,
    /// More than one common root produced a nonempty component.
    pub ambiguous: bool,
}

impl MinimizerSet {
    pub fn empty(n: usize) -> Self {
        MinimizerSet {
            contains_zero: false,
            z_star: None,
            particular: None,
            basis: DMatrix::zeros(n, 0),
            radius: 0.0,
            transform: None,
            ambiguous: false,
        }
    }

    pub fn singleton(s: DVector<f64>) -> Self {
        let n = s.len();
        if s.norm() == 0.0 {
            return MinimizerSet { contains_zero: true, ..Self::empty(n) };
        }
        MinimizerSet { z_star: Some(s.norm()), particular: Some(s), ..Self::empty(n) }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        !self.contains_zero && self.particular.is_none()
    }

    pub fn nullspace_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Whether the nonzero part is a finite set (0 or 2 points, or 1).
    pub fn nonzero_count(&self) -> Option<usize> {
        match (&self.particular, self.basis.ncols()) {
            (None, _) => Some(0),
            (Some(_), 0) => Some(1),
            (Some(_), _) if self.radius == 0.0 => Some(1),
            (Some(_), 1) => Some(2),
            _ => None,
        }
    }

    fn map(&self, v: DVector<f64>) -> DVector<f64> {
        match &self.transform {
            None => v,
            Some(t) => t * v,
        }
    }

    /// The nonzero member `ŝ + N c` for a coefficient vector with `‖c‖ = 1`
    /// scaled to the radius.
    pub fn member(&self, direction: &DVector<f64>) -> Option<DVector<f64>> {
        let base = self.particular.as_ref()?;
        let k = self.basis.ncols();
        if k == 0 {
            return Some(self.map(base.clone()));
        }
        let nrm = direction.norm();
        let c = if nrm > 0.0 { direction * (self.radius / nrm) } else { DVector::zeros(k) };
        Some(self.map(base + &self.basis * c))
    }

    /// A fixed nonzero member (first basis direction), if any.
    pub fn representative(&self) -> Option<DVector<f64>> {
        let k = self.basis.ncols();
        let mut e = DVector::zeros(k);
        if k > 0 {
            e[0] = 1.0;
        }
        self.member(&e)
    }

    /// Every point for a finite set, otherwise `count` seeded samples of the
    /// sphere component; the origin is included when it is a member.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        if self.contains_zero {
            out.push(DVector::zeros(self.transform.as_ref().map_or(self.dim(), |t| t.nrows())));
        }
        if self.particular.is_none() {
            return out;
        }
        let k = self.basis.ncols();
        match self.nonzero_count() {
            Some(1) => out.extend(self.representative()),
            Some(2) => {
                out.extend(self.member(&DVector::from_element(1, 1.0)));
                out.extend(self.member(&DVector::from_element(1, -1.0)));
            }
            _ => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                for _ in 0..count {
                    let c = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                    out.extend(self.member(&c));
                }
            }
        }
        out
    }

    /// Euclidean distance from `s` to the set, in the set's own coordinates
    /// (the transform is inverted first when present).
    pub fn distance(&self, s: &DVector<f64>) -> f64 {
        let s = match &self.transform {
            None => s.clone(),
            Some(t) => t.clone().lu().solve(s).unwrap_or_else(|| s.clone()),
        };
        let mut best = if self.contains_zero { s.norm() } else { f64::INFINITY };
        if let Some(base) = &self.particular {
            let d = &s - base;
            let c = self.basis.transpose() * &d;
            let rest = &d - &self.basis * &c;
            let along = if self.basis.ncols() == 0 { 0.0 } else { c.norm() - self.radius };
            best = best.min((rest.norm_squared() + along * along).sqrt());
        }
        best
    }

    /// Expresses the set in variables `s = k·s̃`.
    pub fn scaled(mut self, k: f64) -> Self {
        match self.transform.take() {
            Some(t) => self.transform = Some(t * k),
            None => {
                self.particular = self.particular.map(|p| p * k);
                self.radius *= k;
                self.z_star = self.z_star.map(|z| z * k);
            }
        }
        self
    }

    /// `ŝ` in the caller's variables.
    pub fn particular_point(&self) -> Option<DVector<f64>> {
        self.particular.clone().map(|p| self.map(p))
    }

    pub fn with_transform(mut self, t: DMatrix<f64>) -> Self {
        self.transform = Some(match self.transform {
            None => t,
            Some(inner) => t * inner,
        });
        self
    }
}

/// Runs the extraction steps on a factored certificate: the origin, the
/// common roots, then the sphere-affine solve for each root. Components whose
/// representative misses `γ*` by more than `tol_member` are discarded and
/// reported.
pub fn extract_set(problem: &CqrProblem, cert: &Certificate, cfg: &ExtractConfig) -> (MinimizerSet, Vec<String>) {
    let n = problem.dim();
    let gamma = cert.gamma;
    let mut set = MinimizerSet::empty(n);
    let mut notes = Vec::new();
    let member_tol = cfg.tol_member * (1.0 + gamma.abs());

    set.contains_zero = zero_membership(cert, cfg.tol_zero * (1.0 + gamma.abs()));
    if set.contains_zero && problem.f0 - gamma > member_tol {
        notes.push(format!("origin rejected: M(0) − γ* = {:.3e}", problem.f0 - gamma));
        set.contains_zero = false;
    }
    // ∇M(0) = g, so the origin is stationary only when g vanishes.
    let g_scale = 1.0 + problem.h.amax() + problem.beta.abs() + problem.sigma;
    if set.contains_zero && problem.g.norm() > cfg.tol_zero * g_scale {
        notes.push(format!("origin rejected: ‖g‖ = {:.3e}", problem.g.norm()));
        set.contains_zero = false;
    }

    let roots: Vec<f64> = if cert.is_radially_free() {
        // Nothing constrains the norm, which only happens for a convex
        // quadratic model; its minimizers form an affine set and the
        // minimum-norm member stands in for it.
        notes.push("no radial constraint: reporting the minimum-norm minimizer".into());
        match solve_sphere_affine(cert, 0.0, cfg.tol_null, member_tol) {
            Some(sa) => vec![sa.particular.norm()],
            None => Vec::new(),
        }
    } else {
        common_roots(cert, cfg.tol_root, member_tol)
    };

    let mut components: Vec<(f64, f64, SphereAffine)> = Vec::new();
    for z in roots.into_iter().filter(|&z| z > cfg.tol_root) {
        let Some(sa) = solve_sphere_affine(cert, z, cfg.tol_null, member_tol) else {
            continue;
        };
        let candidate = MinimizerSet {
            z_star: Some(z),
            particular: Some(sa.particular.clone()),
            basis: sa.basis.clone(),
            radius: sa.radius,
            ..MinimizerSet::empty(n)
        };
        let rep = candidate.representative().expect("particular is set");
        let value = problem.evaluate(&rep).unwrap_or(f64::INFINITY);
        if value - gamma > member_tol {
            notes.push(format!("component at z = {z:.6} rejected: M − γ* = {:.3e}", value - gamma));
            continue;
        }
        components.push((value, z, sa));
    }
    components.sort_by(|a, b| a.0.total_cmp(&b.0));
    if components.len() > 1 {
        set.ambiguous = true;
        let zs: Vec<String> = components.iter().map(|c| format!("{:.6}", c.1)).collect();
        notes.push(format!("ambiguous z*: several roots give nonempty components ({})", zs.join(", ")));
    }
    if let Some((_, z, sa)) = components.into_iter().next() {
        if sa.basis.ncols() == 0 || sa.radius == 0.0 {
            // A single point: refine it and let its norm define z*, so the
            // reported radius and point agree.
            let point = polish(problem, sa.particular.clone()).map_or(sa.particular, |(s, _)| s);
            set.z_star = Some(point.norm());
            set.particular = Some(point);
            set.basis = DMatrix::zeros(n, 0);
        } else {
            set.z_star = Some(z);
            set.particular = Some(sa.particular);
            set.basis = sa.basis;
            set.radius = sa.radius;
        }
    }
    (set, notes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reason {
    /// The polynomial system has no solution.
    EmptySystem,
    /// Solutions exist and the norm condition at them decides: tight when
    /// it holds, not tight when it clearly fails.
    NormCondition,
    /// `β ≥ 0` or `λmin(H) ≤ 0`, which always gives a tight relaxation.
    CurvatureOrBeta,
    /// All moment blocks have rank one.
    RankOne,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::EmptySystem => "empty-system",
            Reason::NormCondition => "norm-condition",
            Reason::CurvatureOrBeta => "curvature-or-beta",
            Reason::RankOne => "rank-one",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    /// Best verified lower bound: the interior-point dual value, or the value
    /// of a dual point built from `s_star` when that one verifies and is larger.
    pub gamma_star: f64,
    /// Dual objective of the interior-point solution.
    pub gamma_ipm: f64,
    pub theta_star: f64,
    /// `M` at the best point found; an upper bound on the minimum.
    pub mu_upper: f64,
    pub err_abs: f64,
    /// `err_abs / |mu_upper|`, undefined when `mu_upper = 0`.
    pub err_rel: Option<f64>,
    pub tight: bool,
    pub reason: Reason,
    /// `‖s*‖(β + 3σ‖s*‖)` at `s_star`.
    pub condition_value: Option<f64>,
    pub s_star: Option<DVector<f64>>,
    pub diagnostics: Vec<String>,
}

const POLISH: DescentOptions = DescentOptions { max_iter: 50, tol_grad: 1e-13, newton: true };

/// Local refinement that never makes the point worse. Near a minimizer the
/// value changes at rounding level, so a smaller gradient at an equal value
/// also counts as better.
fn polish(problem: &CqrProblem, s: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let f = problem.evaluate(&s)?;
    let grad = problem.gradient(&s)?.norm();
    let r = local_descent(problem, &s, &POLISH)?;
    let better = r.value < f || (r.value <= f + 1e-12 * (1.0 + f.abs()) && r.grad_norm < grad);
    Ok(if better { (r.point, r.value) } else { (s, f) })
}

pub fn is_rank_one(primal: &SdpPrimal, tol_rank: f64) -> Result<bool> {
    Ok(numerical_rank(&primal.y, tol_rank)? == 1
        && numerical_rank(&primal.z1, tol_rank)? == 1
        && numerical_rank(&primal.z2, tol_rank)? == 1)
}

/// Prefix of the diagnostic left when a forced-tight verdict has no
/// extracted minimizer.
pub const EXTRACTION_FAILED: &str = "no minimizer extracted";

/// Decides tightness. Tests in order: rank-one moments, the curvature-or-β
/// rule, then whether the system has solutions.
pub fn classify(
    problem: &CqrProblem,
    primal: &SdpPrimal,
    dual: &SdpDual,
    set: &MinimizerSet,
    cfg: &ExtractConfig,
) -> Result<TightnessReport> {
    let gamma = dual.gamma;
    let mut diagnostics = Vec::new();
    let rank_one = is_rank_one(primal, cfg.tol_rank)?;
    let forced = problem.beta >= 0.0 || linalg::min_psd_eig(&problem.h)? <= 0.0;

    let (tight, reason) = if rank_one {
        (true, Reason::RankOne)
    } else if forced {
        if set.is_empty() {
            diagnostics.push(format!(
                "{EXTRACTION_FAILED} although β ≥ 0 or λmin(H) ≤ 0 forces tightness \
                 (γ* = {gamma:.12e}, M(0) − γ* = {:.3e}, rank R = {}, ranks X1/X2 = {}/{})",
                problem.f0 - gamma,
                numerical_rank(&dual.x0, cfg.tol_rank)?,
                numerical_rank(&dual.x1, cfg.tol_rank)?,
                numerical_rank(&dual.x2, cfg.tol_rank)?,
            ));
        }
        (true, Reason::CurvatureOrBeta)
    } else if set.is_empty() {
        (false, Reason::EmptySystem)
    } else {
        // Solutions within tolerance can still come from a small but real
        // gap; at a true minimizer the norm condition cannot fail.
        let fails = !set.contains_zero
            && set.representative().is_some_and(|rep| {
                let r = rep.norm();
                problem.norm_condition(r) < -1e-7 * (1.0 + r * (problem.beta.abs() + 3.0 * problem.sigma * r))
            });
        if fails {
            diagnostics.push("extracted point violates the norm condition; the gap is below the extraction tolerance".into());
        }
        (!fails, Reason::NormCondition)
    };

    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if rank_one {
        candidates.push(primal.first_moment());
    }
    if tight {
        if set.contains_zero {
            candidates.push(DVector::zeros(problem.dim()));
        }
        candidates.extend(set.representative());
    }
    if candidates.is_empty() {
        let m = primal.first_moment();
        candidates.push(DVector::zeros(problem.dim()));
        for k in [1.0, 0.9, 1.1] {
            let start = &m * k;
            candidates.push(local_descent(problem, &start, &DescentOptions::default())?.point);
        }
        candidates.push(m);
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    for c in candidates {
        let (s, v) = polish(problem, c)?;
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((s, v));
        }
    }
    let (s_star, mu_upper) = best.expect("at least one candidate");
    let err_abs = (mu_upper - gamma).abs();
    let err_rel = (mu_upper != 0.0).then(|| err_abs / mu_upper.abs());
    let r = s_star.norm();
    let condition_value = problem.norm_condition(r);
    if tight && condition_value < -1e-7 * (1.0 + r * r) {
        diagnostics.push(format!("tight verdict but norm condition is {condition_value:.3e} at the extracted point"));
    }
    if tight && mu_upper - gamma > cfg.tol_member * (1.0 + gamma.abs()) {
        diagnostics.push(format!("extracted point misses γ* by {:.3e}", mu_upper - gamma));
    }
    Ok(TightnessReport {
        gamma_star: gamma,
        gamma_ipm: gamma,
        theta_star: primal.theta,
        mu_upper,
        err_abs,
        err_rel,
        tight,
        reason,
        condition_value: Some(condition_value),
        s_star: Some(s_star),
        diagnostics,
    })
}

/// Dual point certifying `M ≥ M(s)`, built from the expansion
///
/// ```text
/// M(t) − M(s) = ½wᵀB(‖s‖)w + ½(‖t‖−r)²[a(r + 2‖t‖) + (σ/2)‖t‖²],
/// w = t − s,  r = ‖s‖,  a = (β + 3σr)/6,
/// ```
///
/// valid when `B(‖s‖)s = −g`. The first term is `[t]₁ᵀX0[t]₁` with
/// `X0 = ½[−s, I]ᵀB[−s, I]`; the second splits into `X1` (terms in
/// `(z − r)` and `z(z − r)`) and `z·X2` (the term in `z(z − r)²`). Returns
/// `None` unless `B ⪰ 0` and `a ≥ 0`, the conditions that make the blocks
/// PSD. Stationarity is not enforced here; it shows up in
/// [`crate::sdp::SdpData::certificate_residuals`].
pub fn certificate_from_point(problem: &CqrProblem, s: &DVector<f64>) -> Result<Option<SdpDual>> {
    let n = problem.dim();
    let r = s.norm();
    let a = (problem.beta + 3.0 * problem.sigma * r) / 6.0;
    let b = problem.b_matrix(r)?;
    if a < 0.0 || linalg::min_psd_eig(&b)? < 0.0 {
        return Ok(None);
    }
    let mut p = DMatrix::zeros(n, n + 1);
    p.set_column(0, &(-s));
    p.columns_mut(1, n).copy_from(&DMatrix::identity(n, n));
    let x0 = linalg::symmetrize(&(p.transpose() * &b * &p * 0.5));
    let u = DVector::from_vec(vec![-r, 1.0, 0.0]);
    let v = DVector::from_vec(vec![0.0, -r, 1.0]);
    let x1 = &u * u.transpose() * (0.5 * a * r) + &v * v.transpose() * (problem.sigma / 4.0);
    let w = DVector::from_vec(vec![-r, 1.0]);
    let x2 = &w * w.transpose() * a;
    Ok(Some(SdpDual { gamma: problem.evaluate(s)?, x0, x1, x2 }))
}
