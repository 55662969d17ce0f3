//! The cubic-quartic regularization objective
//!
//! ```text
//! M(s) = f0 + gᵀs + ½ sᵀHs + (β/6)‖s‖³ + (σ/4)‖s‖⁴
//! ```
//!
//! with an optional weight matrix `W` replacing the Euclidean norm by
//! `‖s‖_W = sqrt(sᵀWs)`. Everything downstream of this module assumes the
//! weight has been removed with [`apply_w_transform`].

use nalgebra::{DMatrix, DVector};

use crate::error::{CqrError, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct CqrProblem {
    pub f0: f64,
    pub g: DVector<f64>,
    /// Always stored symmetrized.
    pub h: DMatrix<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub w: Option<DMatrix<f64>>,
}

/// Objective value, gradient and (optionally) Hessian at one point.
#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

impl CqrProblem {
    pub fn new(f0: f64, g: DVector<f64>, h: DMatrix<f64>, beta: f64, sigma: f64) -> Result<Self> {
        let n = g.len();
        if n == 0 {
            return Err(CqrError::InvalidInput("dimension must be positive".into()));
        }
        if h.nrows() != n || h.ncols() != n {
            return Err(CqrError::DimensionMismatch { expected: n, got: h.nrows().max(h.ncols()) });
        }
        if !(sigma >= 0.0) {
            return Err(CqrError::InvalidInput(format!("sigma must be nonnegative, got {sigma}")));
        }
        let finite = f0.is_finite()
            && beta.is_finite()
            && sigma.is_finite()
            && g.iter().all(|v| v.is_finite())
            && h.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CqrError::InvalidInput("problem data must be finite".into()));
        }
        Ok(CqrProblem { f0, g, h: linalg::symmetrize(&h), beta, sigma, w: None })
    }

    /// Attaches a symmetric positive-definite weight matrix.
    pub fn with_weight(mut self, w: DMatrix<f64>) -> Result<Self> {
        let n = self.dim();
        if w.nrows() != n || w.ncols() != n {
            return Err(CqrError::DimensionMismatch { expected: n, got: w.nrows().max(w.ncols()) });
        }
        linalg::check_symmetric(&w)?;
        let w = linalg::symmetrize(&w);
        let lmin = linalg::min_psd_eig(&w)?;
        if lmin <= 1e-12 * linalg::max_abs(&w).max(1.0) {
            return Err(CqrError::InvalidInput(format!(
                "weight matrix is not positive definite (smallest eigenvalue {lmin:e})"
            )));
        }
        self.w = Some(w);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Whether a global minimizer is guaranteed to exist.
    pub fn is_bounded_below(&self) -> bool {
        if self.sigma > 0.0 || self.beta > 0.0 {
            return true;
        }
        if self.beta < 0.0 {
            return false;
        }
        linalg::cholesky(&self.h).is_ok()
    }

    fn check_dim(&self, s: &DVector<f64>) -> Result<()> {
        if s.len() != self.dim() {
            return Err(CqrError::DimensionMismatch { expected: self.dim(), got: s.len() });
        }
        Ok(())
    }

    /// `‖s‖` in the problem's norm.
    pub fn norm(&self, s: &DVector<f64>) -> f64 {
        match &self.w {
            None => s.norm(),
            Some(w) => s.dot(&(w * s)).max(0.0).sqrt(),
        }
    }

    /// Radial part `(β/6) r³ + (σ/4) r⁴`.
    pub fn radial(&self, r: f64) -> f64 {
        r * r * r * (self.beta / 6.0 + self.sigma / 4.0 * r)
    }

    /// Quadratic part `f0 + gᵀs + ½ sᵀHs`.
    pub fn quadratic(&self, s: &DVector<f64>) -> f64 {
        self.f0 + self.g.dot(s) + 0.5 * s.dot(&(&self.h * s))
    }

    pub fn evaluate(&self, s: &DVector<f64>) -> Result<f64> {
        self.check_dim(s)?;
        Ok(self.quadratic(s) + self.radial(self.norm(s)))
    }

    /// `g + Hs + ((β/2)‖s‖ + σ‖s‖²) Ws`; equal to `g` at the origin.
    pub fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(s)?;
        let r = self.norm(s);
        let coef = 0.5 * self.beta * r + self.sigma * r * r;
        let ws = match &self.w {
            None => s.clone(),
            Some(w) => w * s,
        };
        Ok(&self.g + &self.h * s + ws * coef)
    }

    pub fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(s)?;
        let n = self.dim();
        let r = self.norm(s);
        if r == 0.0 && self.beta != 0.0 {
            return Err(CqrError::NonsmoothPoint);
        }
        let (wmat, ws) = match &self.w {
            None => (DMatrix::identity(n, n), s.clone()),
            Some(w) => (w.clone(), w * s),
        };
        let outer = &ws * ws.transpose();
        let mut hess = self.h.clone();
        if self.beta != 0.0 {
            hess += (&wmat * r + &outer / r) * (0.5 * self.beta);
        }
        hess += (&wmat * (r * r) + &outer * 2.0) * self.sigma;
        Ok(linalg::symmetrize(&hess))
    }

    pub fn eval_bundle(&self, s: &DVector<f64>, with_hessian: bool) -> Result<EvalBundle> {
        Ok(EvalBundle {
            value: self.evaluate(s)?,
            gradient: self.gradient(s)?,
            hessian: if with_hessian { Some(self.hessian(s)?) } else { None },
        })
    }

    /// `B(r) = H + ((β/2) r + σ r²) W`.
    pub fn b_matrix(&self, r: f64) -> Result<DMatrix<f64>> {
        if !(r >= 0.0) {
            return Err(CqrError::InvalidInput(format!("radius must be nonnegative, got {r}")));
        }
        let n = self.dim();
        let coef = 0.5 * self.beta * r + self.sigma * r * r;
        Ok(match &self.w {
            None => &self.h + DMatrix::identity(n, n) * coef,
            Some(w) => &self.h + w * coef,
        })
    }

    /// `‖s‖(β + 3σ‖s‖)`, nonnegative at a minimizer exactly when the
    /// relaxation is tight.
    pub fn norm_condition(&self, r: f64) -> f64 {
        r * (self.beta + 3.0 * self.sigma * r)
    }
}

/// Maps a point of a transformed problem back to the original variables.
#[derive(Debug, Clone, PartialEq)]
pub enum BackMap {
    Identity,
    Scale(f64),
    Linear(DMatrix<f64>),
}

impl BackMap {
    pub fn apply(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            BackMap::Identity => s.clone(),
            BackMap::Scale(k) => s * *k,
            BackMap::Linear(m) => m * s,
        }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &BackMap) -> BackMap {
        match (self, inner) {
            (BackMap::Identity, other) | (other, BackMap::Identity) => other.clone(),
            (BackMap::Scale(a), BackMap::Scale(b)) => BackMap::Scale(a * b),
            (BackMap::Scale(a), BackMap::Linear(m)) | (BackMap::Linear(m), BackMap::Scale(a)) => {
                BackMap::Linear(m * *a)
            }
            (BackMap::Linear(a), BackMap::Linear(b)) => BackMap::Linear(a * b),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, BackMap::Identity)
    }
}

/// Removes the weight matrix through `s = W^{-1/2} s̃`.
pub fn apply_w_transform(problem: &CqrProblem) -> Result<(CqrProblem, BackMap)> {
    let Some(w) = &problem.w else {
        return Ok((problem.clone(), BackMap::Identity));
    };
    let eig = linalg::sym_eigen(w)?;
    if eig.min() <= 1e-12 * eig.max().abs().max(1.0) {
        return Err(CqrError::InvalidInput("weight matrix is not positive definite".into()));
    }
    let inv_sqrt = eig.values.map(|l| 1.0 / l.sqrt());
    let root = &eig.vectors * DMatrix::from_diagonal(&inv_sqrt) * eig.vectors.transpose();
    let root = linalg::symmetrize(&root);
    let g = &root * &problem.g;
    let h = &root * &problem.h * &root;
    let reduced = CqrProblem::new(problem.f0, g, h, problem.beta, problem.sigma)?;
    Ok((reduced, BackMap::Linear(root)))
}

/// Rescales a problem with `σ > 0` to `σ = 4` through `s = (4/σ)^{1/4} s̃`.
/// The flag is `false` when the transform does not apply (`σ = 0`) and the
/// identity map is returned.
pub fn normalize_sigma(problem: &CqrProblem) -> Result<(CqrProblem, BackMap, bool)> {
    if problem.sigma == 0.0 {
        return Ok((problem.clone(), BackMap::Identity, false));
    }
    if problem.sigma == 4.0 {
        return Ok((problem.clone(), BackMap::Identity, true));
    }
    let k = (4.0 / problem.sigma).powf(0.25);
    let mut scaled = CqrProblem::new(
        problem.f0,
        &problem.g * k,
        &problem.h * (k * k),
        problem.beta * k * k * k,
        4.0,
    )?;
    if let Some(w) = &problem.w {
        scaled = scaled.with_weight(w.clone())?;
    }
    Ok((scaled, BackMap::Scale(k), true))
}

/// Rescales a problem with `σ > 0` in both variables and value,
/// `s = κ s̃` and `M(s) = c·M̃(s̃)`, so that `σ̃ = 4` and the radial scale
/// of the minimizers is of order one. `κ` is the largest of `|β|/(2σ)`,
/// `√(ρ(H)/σ)` and `(‖g‖/σ)^{1/3}`, the sizes at which the quartic term
/// balances the others. Returns the problem, the point map and `c`. With
/// `σ = 0` nothing changes and `c = 1`.
pub fn normalize_scale(problem: &CqrProblem) -> Result<(CqrProblem, BackMap, f64)> {
    let sigma = problem.sigma;
    if sigma == 0.0 {
        return Ok((problem.clone(), BackMap::Identity, 1.0));
    }
    let spectral = if problem.dim() > 0 {
        let vals = linalg::sym_eigenvalues(&problem.h)?;
        vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        0.0
    };
    let kappa = [problem.beta.abs() / (2.0 * sigma), (spectral / sigma).sqrt(), (problem.g.norm() / sigma).cbrt()]
        .into_iter()
        .fold(0.0f64, f64::max);
    let kappa = if kappa > 0.0 { kappa } else { (4.0 / sigma).powf(0.25) };
    let c = sigma * kappa.powi(4) / 4.0;
    let mut scaled = CqrProblem::new(
        problem.f0 / c,
        &problem.g * (kappa / c),
        &problem.h * (kappa * kappa / c),
        problem.beta * kappa.powi(3) / c,
        4.0,
    )?;
    if let Some(w) = &problem.w {
        scaled = scaled.with_weight(w.clone())?;
    }
    Ok((scaled, BackMap::Scale(kappa), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn scalar(f0: f64, g: f64, h: f64, beta: f64, sigma: f64) -> CqrProblem {
        CqrProblem::new(f0, DVector::from_element(1, g), DMatrix::from_element(1, 1, h), beta, sigma)
            .unwrap()
    }

    fn example_i() -> CqrProblem {
        scalar(1.0, -4.0, 12.0, -24.0, 4.0)
    }

    fn random_problem(n: usize, rng: &mut ChaCha20Rng) -> CqrProblem {
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let h = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
        let beta = rng.gen_range(-5.0..5.0);
        let sigma = rng.gen_range(0.1..5.0);
        CqrProblem::new(rng.gen_range(-1.0..1.0), g, h, beta, sigma).unwrap()
    }

    fn random_point(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn evaluate_examples() {
        let p = example_i();
        assert_relative_eq!(p.evaluate(&DVector::from_element(1, 1.0)).unwrap(), 0.0);
        assert_eq!(p.evaluate(&DVector::zeros(1)).unwrap(), 1.0);

        let p = CqrProblem::new(
            0.0,
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::identity(2, 2) * 2.0,
            3.0,
            4.0,
        )
        .unwrap();
        let v = p.evaluate(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(v, 7.0 + 2f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = example_i();
        assert_eq!(
            p.evaluate(&DVector::zeros(2)),
            Err(CqrError::DimensionMismatch { expected: 1, got: 2 })
        );
        assert!(p.gradient(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn gradient_examples() {
        let p = example_i();
        assert_relative_eq!(p.gradient(&DVector::from_element(1, 1.0)).unwrap()[0], 0.0);
        assert_eq!(p.gradient(&DVector::zeros(1)).unwrap(), p.g);
    }

    #[test]
    fn hessian_examples() {
        let p = CqrProblem::new(0.0, DVector::zeros(2), DMatrix::identity(2, 2) * 2.0, 0.0, 4.0)
            .unwrap();
        let h = p.hessian(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(h, DMatrix::from_row_slice(2, 2, &[14.0, 0.0, 0.0, 6.0]));

        // (s - 1)^4 has zero curvature at s = 1.
        let h = example_i().hessian(&DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.0, epsilon = 1e-12);

        assert_eq!(example_i().hessian(&DVector::zeros(1)), Err(CqrError::NonsmoothPoint));
    }

    #[test]
    fn b_matrix_examples() {
        let p = example_i();
        assert_eq!(p.b_matrix(0.0).unwrap(), p.h);
        assert_relative_eq!(p.b_matrix(1.0).unwrap()[(0, 0)], 4.0);
        let p = CqrProblem::new(
            0.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]),
            4.0,
            0.0,
        )
        .unwrap();
        assert_eq!(p.b_matrix(1.0).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
        assert!(p.b_matrix(-1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let p = random_problem(n, &mut rng);
            let s = random_point(n, &mut rng);
            let grad = p.gradient(&s).unwrap();
            let step = 1e-5 * (1.0 + s.norm());
            let mut fd = DVector::zeros(n);
            for i in 0..n {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[i] += step;
                sm[i] -= step;
                fd[i] = (p.evaluate(&sp).unwrap() - p.evaluate(&sm).unwrap()) / (2.0 * step);
            }
            assert!((&fd - &grad).norm() <= 1e-5 * (1.0 + grad.norm()), "{fd} vs {grad}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(1..5);
            let p = random_problem(n, &mut rng);
            let mut s = random_point(n, &mut rng);
            if s.norm() < 0.1 {
                s[0] += 0.5;
            }
            let hess = p.hessian(&s).unwrap();
            let step = 1e-5 * (1.0 + s.norm());
            let mut fd = DMatrix::zeros(n, n);
            for i in 0..n {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[i] += step;
                sm[i] -= step;
                let col = (p.gradient(&sp).unwrap() - p.gradient(&sm).unwrap()) / (2.0 * step);
                fd.set_column(i, &col);
            }
            assert!((&fd - &hess).norm() <= 1e-5 * (1.0 + hess.norm()));
        }
    }

    #[test]
    fn gradient_is_g_plus_b_times_s() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(1..6);
            let p = random_problem(n, &mut rng);
            let s = random_point(n, &mut rng);
            let via_b = &p.g + p.b_matrix(s.norm()).unwrap() * &s;
            assert_relative_eq!(p.gradient(&s).unwrap(), via_b, epsilon = 1e-12);
        }
    }

    #[test]
    fn objective_is_rotation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for _ in 0..10 {
            let n = rng.gen_range(2..6);
            let p = random_problem(n, &mut rng);
            let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let rotated = CqrProblem::new(p.f0, &q * &p.g, &q * &p.h * q.transpose(), p.beta, p.sigma)
                .unwrap();
            let s = random_point(n, &mut rng);
            let a = p.evaluate(&s).unwrap();
            let b = rotated.evaluate(&(&q * &s)).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn w_transform_identity_and_scaled() {
        let p = example_i().with_weight(DMatrix::identity(1, 1)).unwrap();
        let (t, map) = apply_w_transform(&p).unwrap();
        assert_relative_eq!(t.g, p.g);
        assert_relative_eq!(t.h, p.h);
        assert_relative_eq!(map.apply(&DVector::from_element(1, 3.0))[0], 3.0);

        let p = scalar(0.0, 2.0, 4.0, 1.0, 1.0).with_weight(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let (t, map) = apply_w_transform(&p).unwrap();
        assert_relative_eq!(t.g[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.h[(0, 0)], 1.0, epsilon = 1e-14);
        let st = DVector::from_element(1, 0.7);
        assert_relative_eq!(p.norm(&map.apply(&st)), st.norm(), epsilon = 1e-14);
    }

    #[test]
    fn w_transform_round_trip_random_spd() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let base = random_problem(3, &mut rng);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let p = base.with_weight(w).unwrap();
        let (t, map) = apply_w_transform(&p).unwrap();
        assert!(t.w.is_none());
        for _ in 0..10 {
            let st = random_point(3, &mut rng);
            let orig = p.evaluate(&map.apply(&st)).unwrap();
            let red = t.evaluate(&st).unwrap();
            assert_relative_eq!(orig, red, epsilon = 1e-10 * (1.0 + orig.abs()));
        }
    }

    #[test]
    fn w_transform_rejects_indefinite_weight() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = CqrProblem::new(0.0, DVector::zeros(2), DMatrix::identity(2, 2), 0.0, 1.0).unwrap();
        assert!(p.with_weight(w).is_err());
    }

    #[test]
    fn normalize_sigma_examples() {
        let p = example_i();
        let (t, map, applied) = normalize_sigma(&p).unwrap();
        assert!(applied);
        assert_eq!(t, p);
        assert!(map.is_identity());

        let p = scalar(0.5, 1.0, 3.0, -2.0, 64.0);
        let (t, map, _) = normalize_sigma(&p).unwrap();
        assert_relative_eq!(t.sigma, 4.0);
        assert_relative_eq!(t.g[0], 0.5);
        assert_relative_eq!(t.h[(0, 0)], 0.75);
        assert_relative_eq!(t.beta, -0.25);
        assert_eq!(map, BackMap::Scale(0.5));

        let p = CqrProblem::new(0.0, DVector::zeros(1), DMatrix::identity(1, 1), 1.0, 0.0).unwrap();
        let (_, map, applied) = normalize_sigma(&p).unwrap();
        assert!(!applied);
        assert!(map.is_identity());
    }

    #[test]
    fn normalize_scale_preserves_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut p = random_problem(3, &mut rng);
            p.beta = rng.gen_range(-200.0..50.0);
            p.sigma = rng.gen_range(0.1..9.0);
            let (t, map, c) = normalize_scale(&p).unwrap();
            assert_eq!(t.sigma, 4.0);
            let s = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            assert_relative_eq!(c * t.evaluate(&s).unwrap(), p.evaluate(&map.apply(&s)).unwrap(), max_relative = 1e-11);
        }
        let p = scalar(1.0, 0.0, 0.0, 0.0, 0.0);
        let (_, map, c) = normalize_scale(&p).unwrap();
        assert!(map.is_identity() && c == 1.0);
    }

    #[test]
    fn normalize_sigma_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..10 {
            let p = random_problem(3, &mut rng);
            let (t, map, _) = normalize_sigma(&p).unwrap();
            let st = random_point(3, &mut rng);
            let a = p.evaluate(&map.apply(&st)).unwrap();
            let b = t.evaluate(&st).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn coercivity_flag() {
        let h = DMatrix::identity(2, 2) * -1.0;
        let p = CqrProblem::new(0.0, DVector::zeros(2), h.clone(), 0.0, 0.0).unwrap();
        assert!(!p.is_bounded_below());
        let p = CqrProblem::new(0.0, DVector::zeros(2), h.clone(), 1.0, 0.0).unwrap();
        assert!(p.is_bounded_below());
        let p = CqrProblem::new(0.0, DVector::zeros(2), h, -1.0, 0.0).unwrap();
        assert!(!p.is_bounded_below());
        let p = CqrProblem::new(0.0, DVector::zeros(2), DMatrix::identity(2, 2), 0.0, 0.0).unwrap();
        assert!(p.is_bounded_below());
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(CqrProblem::new(0.0, DVector::zeros(1), DMatrix::zeros(1, 1), 0.0, -1.0).is_err());
    }
}
