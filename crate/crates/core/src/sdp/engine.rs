//! Primal-dual path-following method for block-diagonal SDPs with sparse
//! entry-wise constraints.
//!
//! Primal: `min Σ C_b • X_b + offset` s.t. `A_i(X) = b_i`, `X_b ⪰ 0`.
//! Dual:   `max bᵀy + offset` s.t. `Σ y_i A_i + S = C`, `S_b ⪰ 0`.
//!
//! HKM directions with Mehrotra predictor-corrector, infeasible start.

use nalgebra::{DMatrix, DVector};

use crate::error::{CqrError, Result};
use crate::linalg;

/// One term of a constraint: `coef · X_b[p, q]` with `p ≤ q`. An
/// off-diagonal entry is counted once, i.e. the symmetric constraint matrix
/// holds `coef / 2` at both `(p, q)` and `(q, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Entry {
    pub block: usize,
    pub p: usize,
    pub q: usize,
    pub coef: f64,
}

impl Entry {
    pub fn new(block: usize, p: usize, q: usize, coef: f64) -> Self {
        let (p, q) = if p <= q { (p, q) } else { (q, p) };
        Entry { block, p, q, coef }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSdp {
    pub sizes: Vec<usize>,
    pub cost: Vec<DMatrix<f64>>,
    pub offset: f64,
    pub constraints: Vec<Vec<Entry>>,
    pub rhs: DVector<f64>,
    /// Number of leading constraints whose block supports are pairwise
    /// disjoint; their part of the Schur matrix is diagonal.
    pub decoupled: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
    /// Once the tolerances hold, keep iterating towards this merit and return
    /// the best iterate seen. Zero stops at the tolerances.
    pub refine: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub x: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stats {
    pub iterations: usize,
    pub rel_gap: f64,
    pub pinf: f64,
    pub dinf: f64,
    pub pobj: f64,
    pub dobj: f64,
}

/// Entries `(p, q, coef)` of one constraint within one block.
type Terms = Vec<(usize, usize, f64)>;

/// Constraint terms grouped by block: `(constraint, terms)`.
struct Layout {
    by_block: Vec<Vec<(usize, Terms)>>,
}

impl Layout {
    fn new(sdp: &BlockSdp) -> Self {
        let mut by_block: Vec<Vec<(usize, Terms)>> = vec![Vec::new(); sdp.sizes.len()];
        for (i, cons) in sdp.constraints.iter().enumerate() {
            for e in cons {
                let list = &mut by_block[e.block];
                match list.last_mut() {
                    Some((j, terms)) if *j == i => terms.push((e.p, e.q, e.coef)),
                    _ => list.push((i, vec![(e.p, e.q, e.coef)])),
                }
            }
        }
        // A constraint may list a block in several non-adjacent runs.
        for list in &mut by_block {
            list.sort_by_key(|(i, _)| *i);
            let mut merged: Vec<(usize, Terms)> = Vec::with_capacity(list.len());
            for (i, terms) in list.drain(..) {
                match merged.last_mut() {
                    Some((j, t)) if *j == i => t.extend(terms),
                    _ => merged.push((i, terms)),
                }
            }
            *list = merged;
        }
        Layout { by_block }
    }
}

impl BlockSdp {
    fn validate(&self) -> Result<()> {
        let nb = self.sizes.len();
        if self.cost.len() != nb {
            return Err(CqrError::InvalidInput("cost block count mismatch".into()));
        }
        for (c, &k) in self.cost.iter().zip(&self.sizes) {
            if c.nrows() != k || c.ncols() != k {
                return Err(CqrError::InvalidInput("cost block size mismatch".into()));
            }
        }
        if self.rhs.len() != self.constraints.len() || self.decoupled > self.constraints.len() {
            return Err(CqrError::InvalidInput("constraint count mismatch".into()));
        }
        for cons in &self.constraints {
            for e in cons {
                if e.block >= nb || e.q >= self.sizes[e.block] || e.p > e.q {
                    return Err(CqrError::InvalidInput("constraint entry out of range".into()));
                }
            }
        }
        let mut owner = vec![usize::MAX; nb];
        for (i, cons) in self.constraints[..self.decoupled].iter().enumerate() {
            for e in cons {
                if owner[e.block] != usize::MAX && owner[e.block] != i {
                    return Err(CqrError::InvalidInput("decoupled constraints share a block".into()));
                }
                owner[e.block] = i;
            }
        }
        Ok(())
    }

    /// `A(M)` for possibly non-symmetric blocks `M` (only the symmetric
    /// part is seen by a symmetric constraint matrix).
    pub fn apply(&self, m: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|cons| {
                cons.iter()
                    .map(|e| {
                        let b = &m[e.block];
                        if e.p == e.q {
                            e.coef * b[(e.p, e.p)]
                        } else {
                            0.5 * e.coef * (b[(e.p, e.q)] + b[(e.q, e.p)])
                        }
                    })
                    .sum::<f64>()
            }),
        )
    }

    /// `Σ y_i A_i` as symmetric blocks.
    pub fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        for (cons, &yi) in self.constraints.iter().zip(y.iter()) {
            for e in cons {
                let b = &mut out[e.block];
                if e.p == e.q {
                    b[(e.p, e.p)] += yi * e.coef;
                } else {
                    let v = 0.5 * yi * e.coef;
                    b[(e.p, e.q)] += v;
                    b[(e.q, e.p)] += v;
                }
            }
        }
        out
    }

    pub fn primal_objective(&self, x: &[DMatrix<f64>]) -> f64 {
        inner(&self.cost, x) + self.offset
    }

    pub fn dual_objective(&self, y: &DVector<f64>) -> f64 {
        self.rhs.dot(y) + self.offset
    }
}

pub(crate) fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eig(m: &DMatrix<f64>) -> Result<f64> {
    match m.nrows() {
        0 => Ok(f64::INFINITY),
        1 => Ok(m[(0, 0)]),
        2 => {
            let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            Ok(mid - rad)
        }
        _ => Ok(linalg::sym_eigenvalues(&sym(m))?[0]),
    }
}

/// Largest `α` with `X + α·dX ⪰ 0`, or `None` if `X` itself is not PD.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<Option<f64>> {
    let Some(chol) = x.clone().cholesky() else {
        return Ok(None);
    };
    let l = chol.l();
    let Some(z) = l.solve_lower_triangular(dx) else {
        return Ok(None);
    };
    let Some(w) = l.solve_lower_triangular(&z.transpose()) else {
        return Ok(None);
    };
    let lmin = min_eig(&w)?;
    Ok(Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin }))
}

fn max_step_blocks(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> Result<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        match max_step(xb, db)? {
            Some(a) => alpha = alpha.min(a),
            None => return Err(CqrError::IllConditioned("iterate lost positive definiteness".into())),
        }
    }
    Ok(alpha)
}

fn pair_value(ti: &[(usize, usize, f64)], tj: &[(usize, usize, f64)], g: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for &(a, b, ci) in ti {
        for &(c, d, cj) in tj {
            acc += ci
                * cj
                * (g[(b, c)] * x[(d, a)] + g[(b, d)] * x[(c, a)] + g[(a, c)] * x[(d, b)] + g[(a, d)] * x[(c, b)]);
        }
    }
    0.25 * acc
}

/// Factored Schur matrix `[[D, B], [Bᵀ, E]]` with `D` diagonal.
struct Schur {
    d: DVector<f64>,
    b: DMatrix<f64>,
    reduced: ReducedFactor,
}

enum ReducedFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Schur {
    fn build(sdp: &BlockSdp, layout: &Layout, g: &[DMatrix<f64>], x: &[DMatrix<f64>]) -> Result<Self> {
        let m = sdp.constraints.len();
        let p = sdp.decoupled;
        let mut d = DVector::zeros(p);
        let mut b = DMatrix::zeros(p, m - p);
        let mut e = DMatrix::zeros(m - p, m - p);
        for (blk, list) in layout.by_block.iter().enumerate() {
            for (ii, (i, ti)) in list.iter().enumerate() {
                for (j, tj) in &list[ii..] {
                    let v = pair_value(ti, tj, &g[blk], &x[blk]);
                    let (i, j) = (*i, *j);
                    if j < p {
                        // Disjoint supports: only the diagonal can be nonzero.
                        d[i] += v;
                    } else if i < p {
                        b[(i, j - p)] += v;
                    } else {
                        e[(i - p, j - p)] += v;
                        if i != j {
                            e[(j - p, i - p)] += v;
                        }
                    }
                }
            }
        }
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(CqrError::IllConditioned("nonpositive diagonal in the Schur matrix".into()));
        }
        let mut reduced = e;
        for k in 0..p {
            let row = b.row(k);
            reduced -= row.transpose() * row / d[k];
        }
        let reduced = linalg::symmetrize(&reduced);
        let factor = match reduced.clone().cholesky() {
            Some(c) => ReducedFactor::Chol(c),
            None => {
                let lu = reduced.lu();
                if !lu.is_invertible() {
                    return Err(CqrError::IllConditioned("singular Schur matrix".into()));
                }
                ReducedFactor::Lu(lu)
            }
        };
        Ok(Schur { d, b, reduced: factor })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.d.len();
        let r1 = rhs.rows(0, p);
        let r2 = rhs.rows(p, rhs.len() - p);
        let dinv_r1 = r1.component_div(&self.d);
        let t = r2 - self.b.transpose() * &dinv_r1;
        let x2 = match &self.reduced {
            ReducedFactor::Chol(c) => c.solve(&t),
            ReducedFactor::Lu(lu) => lu
                .solve(&t)
                .ok_or_else(|| CqrError::IllConditioned("singular Schur matrix".into()))?,
        };
        let x1 = (r1 - &self.b * &x2).component_div(&self.d);
        let mut out = DVector::zeros(rhs.len());
        out.rows_mut(0, p).copy_from(&x1);
        out.rows_mut(p, rhs.len() - p).copy_from(&x2);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CqrError::IllConditioned("non-finite Schur solution".into()));
        }
        Ok(out)
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
}

struct Context<'a> {
    sdp: &'a BlockSdp,
    gram: &'a nalgebra::Cholesky<f64, nalgebra::Dyn>,
    g: Vec<DMatrix<f64>>,
    rd: Vec<DMatrix<f64>>,
    rp: DVector<f64>,
    schur: Schur,
}

impl Context<'_> {
    /// Direction with `ΔX = sym(K − S⁻¹ ΔS X)`.
    fn direction(&self, x: &[DMatrix<f64>], k: &[DMatrix<f64>], g_rd_x: &DVector<f64>) -> Result<Direction> {
        let rhs = &self.rp - self.sdp.apply(k) + g_rd_x;
        let dy = self.schur.solve(&rhs)?;
        let at = self.sdp.adjoint(&dy);
        let ds: Vec<DMatrix<f64>> = self.rd.iter().zip(&at).map(|(r, a)| r - a).collect();
        let mut dx: Vec<DMatrix<f64>> = k
            .iter()
            .zip(&self.g)
            .zip(ds.iter().zip(x))
            .map(|((kb, gb), (dsb, xb))| sym(&(kb - gb * dsb * xb)))
            .collect();
        // Near the boundary `S⁻¹` is huge and the product above loses the
        // primal equations; restore `A(ΔX) = r_p` by a least-squares
        // correction.
        let miss = &self.rp - self.sdp.apply(&dx);
        let fix = self.sdp.adjoint(&self.gram.solve(&miss));
        for (d, f) in dx.iter_mut().zip(&fix) {
            *d += f;
        }
        Ok(Direction { dx, ds, dy })
    }
}

fn step(v: &[DMatrix<f64>], d: &[DMatrix<f64>], a: f64) -> Vec<DMatrix<f64>> {
    v.iter().zip(d).map(|(x, dx)| x + dx * a).collect()
}

fn inverse_pd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match s.nrows() {
        1 => {
            let v = s[(0, 0)];
            if !(v > 0.0) {
                return Err(CqrError::IllConditioned("dual slack lost positive definiteness".into()));
            }
            Ok(DMatrix::from_element(1, 1, 1.0 / v))
        }
        _ => {
            let chol = s
                .clone()
                .cholesky()
                .ok_or_else(|| CqrError::IllConditioned("dual slack lost positive definiteness".into()))?;
            Ok(sym(&chol.inverse()))
        }
    }
}

fn measure(sdp: &BlockSdp, it: &Iterate, b_norm: f64, c_norm: f64) -> (Stats, DVector<f64>, Vec<DMatrix<f64>>) {
    let rp = &sdp.rhs - sdp.apply(&it.x);
    let at = sdp.adjoint(&it.y);
    let rd: Vec<DMatrix<f64>> = sdp
        .cost
        .iter()
        .zip(&it.s)
        .zip(&at)
        .map(|((c, s), a)| c - s - a)
        .collect();
    let pobj = sdp.primal_objective(&it.x);
    let dobj = sdp.dual_objective(&it.y);
    let stats = Stats {
        iterations: 0,
        rel_gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        pinf: rp.norm() / (1.0 + b_norm),
        dinf: frob(&rd) / (1.0 + c_norm),
        pobj,
        dobj,
    };
    (stats, rp, rd)
}

/// One Mehrotra predictor-corrector step.
#[allow(clippy::too_many_arguments)]
fn iterate_once(
    sdp: &BlockSdp,
    layout: &Layout,
    gram: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    it: &Iterate,
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    dim_total: usize,
    step_fraction: f64,
) -> Result<Iterate> {
    let mu = inner(&it.x, &it.s) / dim_total as f64;
    let g: Vec<DMatrix<f64>> = it.s.iter().map(inverse_pd).collect::<Result<_>>()?;
    let schur = Schur::build(sdp, layout, &g, &it.x)?;
    let g_rd_x: Vec<DMatrix<f64>> = g.iter().zip(&rd).zip(&it.x).map(|((gb, r), xb)| gb * r * xb).collect();
    let ctx = Context { sdp, gram, g, rd, rp, schur };
    let a_g_rd_x = sdp.apply(&g_rd_x);

    // Predictor.
    let k_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
    let aff = ctx.direction(&it.x, &k_aff, &a_g_rd_x)?;
    let ap = max_step_blocks(&it.x, &aff.dx)?.min(1.0);
    let ad = max_step_blocks(&it.s, &aff.ds)?.min(1.0);
    let mu_aff = inner(&step(&it.x, &aff.dx, ap), &step(&it.s, &aff.ds, ad)) / dim_total as f64;
    let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

    // Corrector.
    let k: Vec<DMatrix<f64>> = it
        .x
        .iter()
        .zip(&ctx.g)
        .zip(aff.ds.iter().zip(&aff.dx))
        .map(|((x, gb), (ds, dx))| gb * (sigma * mu) - x - gb * ds * dx)
        .collect();
    let dir = ctx.direction(&it.x, &k, &a_g_rd_x)?;
    let (next, fallback) = centered_step(it, &dir, dim_total, step_fraction)?;
    if let Some(next) = next {
        return Ok(next);
    }
    // Pull the iterate back toward the central path before giving up on
    // centrality.
    let k_center: Vec<DMatrix<f64>> = it.x.iter().zip(&ctx.g).map(|(x, gb)| gb * mu - x).collect();
    let center = ctx.direction(&it.x, &k_center, &a_g_rd_x)?;
    if let (Some(next), _) = centered_step(it, &center, dim_total, step_fraction)? {
        return Ok(next);
    }
    fallback.ok_or_else(|| CqrError::IllConditioned("no step keeps the iterate interior".into()))
}

/// Longest step along `dir` (shortened by ×0.8 up to 30 times) that stays
/// centered, and the longest numerically interior one seen on the way.
fn centered_step(it: &Iterate, dir: &Direction, dim_total: usize, step_fraction: f64) -> Result<(Option<Iterate>, Option<Iterate>)> {
    let ap0 = (step_fraction * max_step_blocks(&it.x, &dir.dx)?).min(1.0);
    let ad0 = (step_fraction * max_step_blocks(&it.s, &dir.ds)?).min(1.0);
    if ap0 < 1e-12 && ad0 < 1e-12 {
        return Err(CqrError::IllConditioned("step length collapsed".into()));
    }
    let take = |ap: f64, ad: f64| Iterate { x: step(&it.x, &dir.dx, ap), s: step(&it.s, &dir.ds, ad), y: &it.y + &dir.dy * ad };
    let (mut ap, mut ad) = (ap0, ad0);
    let mut fallback = None;
    for _ in 0..30 {
        let next = take(ap, ad);
        if centered(&next, dim_total)? {
            return Ok((Some(next), fallback));
        }
        if fallback.is_none() && interior(&next) {
            fallback = Some(next);
        }
        ap *= 0.8;
        ad *= 0.8;
    }
    Ok((None, fallback))
}

fn interior(it: &Iterate) -> bool {
    it.x.iter().chain(&it.s).all(|b| b.clone().cholesky().is_some())
}

/// Smallest eigenvalue of `X^{1/2} S X^{1/2}` allowed, relative to `μ`.
const NEIGHBORHOOD: f64 = 1e-4;

/// Wide-neighborhood test: every eigenvalue of `X^{1/2} S X^{1/2}` is at
/// least `NEIGHBORHOOD·μ`. Without it, single eigenvalue pairs collapse
/// ahead of `μ` and the run stalls short of high accuracy.
fn centered(it: &Iterate, dim_total: usize) -> Result<bool> {
    let mu = inner(&it.x, &it.s) / dim_total as f64;
    for (x, s) in it.x.iter().zip(&it.s) {
        let Some(chol) = x.clone().cholesky() else {
            return Ok(false);
        };
        let l = chol.l();
        if min_eig(&(l.transpose() * s * &l))? < NEIGHBORHOOD * mu {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs the interior-point method from `X = ρ_x I`, `S = ρ_s I`, `y = 0`.
pub(crate) fn solve(sdp: &BlockSdp, settings: &Settings, rho_x: f64, rho_s: f64) -> Result<(Iterate, Stats)> {
    sdp.validate()?;
    let layout = Layout::new(sdp);
    let m = sdp.constraints.len();
    let mut gram = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        gram.set_column(j, &sdp.apply(&sdp.adjoint(&e)));
    }
    let gram = linalg::symmetrize(&gram)
        .cholesky()
        .ok_or_else(|| CqrError::IllConditioned("constraints are linearly dependent".into()))?;
    let dim_total: usize = sdp.sizes.iter().sum();
    let b_norm = sdp.rhs.norm();
    let c_norm = frob(&sdp.cost);

    let mut it = Iterate {
        x: sdp.sizes.iter().map(|&k| DMatrix::identity(k, k) * rho_x).collect(),
        s: sdp.sizes.iter().map(|&k| DMatrix::identity(k, k) * rho_s).collect(),
        y: DVector::zeros(sdp.constraints.len()),
    };

    // Best iterate meeting the tolerances, by the largest of its measures.
    let mut best: Option<(Iterate, Stats, f64)> = None;
    let mut stalled = 0;
    let mut iter = 0;
    loop {
        let (mut stats, rp, rd) = measure(sdp, &it, b_norm, c_norm);
        stats.iterations = iter;
        let compl = inner(&it.x, &it.s) / (1.0 + stats.pobj.abs() + stats.dobj.abs());
        let gap_ok = stats.rel_gap <= settings.tol_gap && compl <= settings.tol_gap * 10.0;
        if gap_ok && stats.pinf <= settings.tol_feas && stats.dinf <= settings.tol_feas {
            let merit = stats.rel_gap.max(compl / 10.0).max(stats.pinf).max(stats.dinf);
            match &best {
                Some((_, _, m)) if merit >= 0.5 * m => stalled += 1,
                _ => stalled = 0,
            }
            if best.as_ref().is_none_or(|b| merit < b.2) {
                best = Some((it.clone(), stats, merit));
            }
            if merit <= settings.refine || stalled >= 3 {
                break;
            }
        }
        if iter >= settings.max_iter {
            if best.is_some() {
                break;
            }
            return Err(CqrError::MaxIterations {
                iterations: iter,
                gap: stats.rel_gap,
                pinf: stats.pinf,
                dinf: stats.dinf,
            });
        }
        iter += 1;
        match iterate_once(sdp, &layout, &gram, &it, rp, rd, dim_total, settings.step_fraction) {
            Ok(next) => it = next,
            Err(_) if best.is_some() => break,
            Err(CqrError::IllConditioned(msg)) => {
                return Err(CqrError::IllConditioned(format!(
                    "{msg} at iteration {iter} (gap {:.3e}, pinf {:.3e}, dinf {:.3e})",
                    stats.rel_gap, stats.pinf, stats.dinf
                )))
            }
            Err(e) => return Err(e),
        }
    }
    let (it, stats, _) = best.expect("loop exits with a converged iterate");
    Ok((it, stats))
}
