//! End-to-end global solve: reduce, relax, certify, extract, map back.

use nalgebra::DVector;

use crate::error::{CqrError, Result};
use crate::extract::{self, Certificate, ExtractConfig, MinimizerSet, Reason, TightnessReport};
use crate::model::{apply_w_transform, normalize_scale, BackMap, CqrProblem};
use crate::sdp::{self, IpmConfig, Residuals, SdpDual, SdpPrimal, SolveStats};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub ipm: IpmConfig,
    pub extract: ExtractConfig,
}

#[derive(Debug, Clone)]
pub struct GlobalSolution {
    /// Verdict and values in the caller's variables.
    pub report: TightnessReport,
    /// Minimizers in the caller's variables.
    pub set: MinimizerSet,
    /// The problem actually relaxed: unweighted and, when `σ > 0`, scaled
    /// to `σ = 4` with minimizers of norm near one.
    pub reduced: CqrProblem,
    /// `M = value_scale · M_reduced` at corresponding points.
    pub value_scale: f64,
    /// Maps points of `reduced` to the caller's variables.
    pub back: BackMap,
    /// Certificate and SDP optimum of `reduced`.
    pub certificate: Certificate,
    pub primal: SdpPrimal,
    pub dual: SdpDual,
    pub stats: SolveStats,
    pub residuals: Residuals,
}

fn map_set(set: MinimizerSet, back: &BackMap) -> MinimizerSet {
    match back {
        BackMap::Identity => set,
        BackMap::Scale(k) => set.scaled(*k),
        BackMap::Linear(t) => set.with_transform(t.clone()),
    }
}

pub fn solve_global(problem: &CqrProblem, opts: &SolveOptions) -> Result<GlobalSolution> {
    if !problem.is_bounded_below() {
        return Err(CqrError::UnboundedBelow);
    }
    let (unweighted, to_weighted) = apply_w_transform(problem)?;
    let (reduced, to_unweighted, value_scale) = normalize_scale(&unweighted)?;
    let back = to_weighted.compose(&to_unweighted);

    let data = sdp::assemble(&reduced)?;
    let (primal, dual, stats) = sdp::ipm_solve(&data, &opts.ipm)?;
    let residuals = sdp::residuals(&data, &primal, &dual)?;
    let certificate = extract::factor_dual(&dual, opts.extract.tol_rank)?;
    let (mut set, notes) = extract::extract_set(&reduced, &certificate, &opts.extract);
    let mut report = extract::classify(&reduced, &primal, &dual, &set, &opts.extract)?;
    report.diagnostics.extend(notes);
    let verified = match report.s_star.clone() {
        Some(s) => rounded_bound(&data, &s, &residuals)?.map(|gamma| (s, gamma)),
        None => None,
    };
    if let Some((s, gamma)) = verified {
        // The point carries its own certificate, so it is a global
        // minimizer; extraction can only have missed it numerically.
        if !report.tight {
            report.tight = true;
            report.reason = Reason::NormCondition;
            report.diagnostics.push("extraction found no minimizer; the best local point is certified globally optimal".into());
            set = MinimizerSet::singleton(s);
        } else if set.is_empty() {
            report.diagnostics.push("set taken from the certified local point".into());
            set = MinimizerSet::singleton(s);
        }
        if gamma > report.gamma_star {
            report.gamma_star = gamma;
        }
    }
    if set.ambiguous {
        report.diagnostics.push("several nonempty components; the one with the lowest objective is kept".into());
    }
    if report.tight && set.is_empty() {
        if report.reason != Reason::RankOne {
            let msg = report.diagnostics.iter().find(|d| d.starts_with(extract::EXTRACTION_FAILED)).cloned();
            return Err(CqrError::InconsistentEvidence(msg.unwrap_or_else(|| "tight verdict without a minimizer".into())));
        }
        let s = report.s_star.clone().expect("rank-one verdict carries a point");
        report.diagnostics.push("system solve found nothing; set taken from the rank-one moment".into());
        set = MinimizerSet::singleton(s);
    }

    let set = map_set(set, &back);
    report.gamma_star *= value_scale;
    report.gamma_ipm *= value_scale;
    report.theta_star *= value_scale;
    if let Some(s) = report.s_star.take() {
        let s = back.apply(&s);
        report.mu_upper = problem.evaluate(&s)?;
        report.err_abs = (report.mu_upper - report.gamma_star).abs();
        report.err_rel = (report.mu_upper != 0.0).then(|| report.err_abs / report.mu_upper.abs());
        report.condition_value = Some(problem.norm_condition(problem.norm(&s)));
        report.s_star = Some(s);
    }
    Ok(GlobalSolution { report, set, reduced, value_scale, back, certificate, primal, dual, stats, residuals })
}

/// Value of the dual point built from `s` when it is at least as feasible as
/// the interior-point dual: PSD blocks by construction and coefficient
/// mismatches no larger than the interior-point ones (or rounding level).
fn rounded_bound(data: &sdp::SdpData, s: &DVector<f64>, ipm: &Residuals) -> Result<Option<f64>> {
    let Some(dual) = extract::certificate_from_point(&data.problem, s)? else {
        return Ok(None);
    };
    let p = &data.problem;
    let scale = 1.0 + p.f0.abs() + p.g.norm() + p.h.norm() + p.beta.abs() + p.sigma;
    let allowed = ipm.dual_infeas.max(1e-13 * scale);
    let worst = data.certificate_residuals(&dual).into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((worst <= allowed).then_some(dual.gamma))
}

/// Convenience wrapper with default options returning the best point.
pub fn minimize(problem: &CqrProblem) -> Result<(DVector<f64>, f64)> {
    let sol = solve_global(problem, &SolveOptions::default())?;
    let s = sol.report.s_star.expect("classification always yields a point");
    Ok((s, sol.report.mu_upper))
}
