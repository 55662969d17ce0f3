//! WebAssembly bindings for the browser demo. Every entry point takes and
//! returns JSON strings; the `*_json` functions hold the logic so they can be
//! tested natively.

use cqr_core::oracle::{phi_on_sphere, radius_bound, SphereSolver};
use cqr_core::{solve_global, CqrProblem, SolveOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Members drawn from the minimizer set for display.
const SAMPLES: usize = 6;
const MAX_PROFILE_POINTS: usize = 2000;
const MAX_SWEEP_STEPS: usize = 400;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInput {
    #[serde(default)]
    pub f0: f64,
    pub g: Vec<f64>,
    /// Rows of the symmetric matrix `H`.
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub beta: f64,
    pub sigma: f64,
}

impl ProblemInput {
    fn build(&self, beta: f64) -> Result<CqrProblem, String> {
        let n = self.g.len();
        if n == 0 {
            return Err("g must have at least one entry".into());
        }
        if self.h.len() != n || self.h.iter().any(|row| row.len() != n) {
            return Err(format!("H must be {n} by {n} to match g"));
        }
        let h = DMatrix::from_fn(n, n, |i, j| self.h[i][j]);
        CqrProblem::new(self.f0, DVector::from_vec(self.g.clone()), h, beta, self.sigma).map_err(|e| e.to_string())
    }
}

fn parse(input: &str) -> Result<ProblemInput, String> {
    serde_json::from_str(input).map_err(|e| format!("invalid problem: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub n: usize,
    pub tight: bool,
    pub reason: String,
    pub gamma_star: f64,
    pub mu_upper: f64,
    pub err_abs: f64,
    pub condition_value: Option<f64>,
    pub s_star: Option<Vec<f64>>,
    pub z_star: Option<f64>,
    pub contains_zero: bool,
    pub nullspace_dim: usize,
    pub members: Vec<Vec<f64>>,
    pub iterations: usize,
    pub gap: f64,
    pub diagnostics: Vec<String>,
}

/// Global solve with default options.
pub fn solve_json(input: &str) -> Result<String, String> {
    let spec = parse(input)?;
    let p = spec.build(spec.beta)?;
    let sol = solve_global(&p, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let r = &sol.report;
    to_json(&SolveOutput {
        n: p.dim(),
        tight: r.tight,
        reason: r.reason.to_string(),
        gamma_star: r.gamma_star,
        mu_upper: r.mu_upper,
        err_abs: r.err_abs,
        condition_value: r.condition_value,
        s_star: r.s_star.as_ref().map(|s| s.as_slice().to_vec()),
        z_star: sol.set.z_star,
        contains_zero: sol.set.contains_zero,
        nullspace_dim: sol.set.nullspace_dim(),
        members: sol.set.sample(SAMPLES, 1).iter().map(|m| m.as_slice().to_vec()).collect(),
        iterations: sol.stats.iterations,
        gap: sol.stats.gap,
        diagnostics: r.diagnostics.clone(),
    })
}

#[derive(Debug, Serialize)]
pub struct ProfileOutput {
    pub r: Vec<f64>,
    /// Smallest value of the model on the sphere of radius `r`.
    pub psi: Vec<f64>,
    /// `r(β + 3σr)`, whose sign decides whether a minimizer of that norm
    /// can be certified by the relaxation.
    pub condition: Vec<f64>,
    pub r_min: f64,
    pub psi_min: f64,
}

/// Samples the radial profile on `[0, r_max]`, where `r_max` covers every
/// global minimizer.
pub fn profile_json(input: &str, points: usize) -> Result<String, String> {
    let spec = parse(input)?;
    let p = spec.build(spec.beta)?;
    if !p.is_bounded_below() {
        return Err("the model is unbounded below".into());
    }
    let points = points.clamp(2, MAX_PROFILE_POINTS);
    let lambda_min = SphereSolver::new(&p).map_err(|e| e.to_string())?.lambda_min();
    let r_max = 1.1 * radius_bound(&p, lambda_min).map_err(|e| e.to_string())?.max(1e-3);
    let mut out = ProfileOutput { r: Vec::new(), psi: Vec::new(), condition: Vec::new(), r_min: 0.0, psi_min: f64::INFINITY };
    for k in 0..points {
        let r = r_max * k as f64 / (points - 1) as f64;
        let (phi, _) = phi_on_sphere(&p, r).map_err(|e| e.to_string())?;
        let psi = phi + p.radial(r);
        if psi < out.psi_min {
            out.psi_min = psi;
            out.r_min = r;
        }
        out.r.push(r);
        out.psi.push(psi);
        out.condition.push(p.norm_condition(r));
    }
    to_json(&out)
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub tight: Option<bool>,
    pub reason: Option<String>,
    pub gamma_star: Option<f64>,
    pub mu_upper: Option<f64>,
    pub error: Option<String>,
}

/// Solves the problem for `steps` evenly spaced values of `β` in
/// `[beta_min, beta_max]`, replacing the input `β`.
pub fn sweep_json(input: &str, beta_min: f64, beta_max: f64, steps: usize) -> Result<String, String> {
    let spec = parse(input)?;
    if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min > beta_max {
        return Err("need finite beta_min <= beta_max".into());
    }
    let steps = steps.clamp(1, MAX_SWEEP_STEPS);
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let beta = if steps == 1 { beta_min } else { beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64 };
        let p = spec.build(beta)?;
        let row = match solve_global(&p, &SolveOptions::default()) {
            Ok(sol) => SweepRow {
                beta,
                tight: Some(sol.report.tight),
                reason: Some(sol.report.reason.to_string()),
                gamma_star: Some(sol.report.gamma_star),
                mu_upper: Some(sol.report.mu_upper),
                error: None,
            },
            Err(e) => SweepRow { beta, tight: None, reason: None, gamma_star: None, mu_upper: None, error: Some(e.to_string()) },
        };
        rows.push(row);
    }
    to_json(&rows)
}

#[wasm_bindgen]
pub fn solve(input: &str) -> Result<String, JsError> {
    solve_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn profile(input: &str, points: usize) -> Result<String, JsError> {
    profile_json(input, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep(input: &str, beta_min: f64, beta_max: f64, steps: usize) -> Result<String, JsError> {
    sweep_json(input, beta_min, beta_max, steps).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const QUARTIC: &str = r#"{"f0": 1, "g": [-4], "H": [[12]], "beta": -24, "sigma": 4}"#;
    const ORIGIN_AND_SPHERE: &str = r#"{"g": [0, 0], "H": [[8, 0], [0, 8]], "beta": -24, "sigma": 4}"#;

    fn value(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn solve_reports_not_tight_quartic() {
        let v = value(&solve_json(QUARTIC).unwrap());
        assert_eq!(v["tight"], false);
        assert!((v["gamma_star"].as_f64().unwrap() + 1.0).abs() < 1e-6);
        assert!(v["mu_upper"].as_f64().unwrap().abs() < 1e-9);
    }

    #[test]
    fn solve_reports_sphere() {
        let v = value(&solve_json(ORIGIN_AND_SPHERE).unwrap());
        assert_eq!(v["tight"], true);
        assert_eq!(v["contains_zero"], true);
        assert!((v["z_star"].as_f64().unwrap() - 2.0).abs() < 1e-6);
        for m in v["members"].as_array().unwrap() {
            let norm = m.as_array().unwrap().iter().map(|x| x.as_f64().unwrap().powi(2)).sum::<f64>().sqrt();
            assert!(norm < 1e-9 || (norm - 2.0).abs() < 1e-6, "{norm}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_json("{").unwrap_err().contains("invalid problem"));
        assert!(solve_json(r#"{"g": [1, 2], "H": [[1]], "beta": 0, "sigma": 1}"#).unwrap_err().contains("2 by 2"));
        assert!(solve_json(r#"{"g": [1], "H": [[1]], "beta": 0, "sigma": 1, "x": 0}"#).is_err());
        assert!(profile_json(r#"{"g": [1], "H": [[-1]], "beta": -1, "sigma": 0}"#, 10).unwrap_err().contains("unbounded"));
    }

    #[test]
    fn profile_finds_both_quartic_minimizers() {
        // (r - 1)^2 (r - 2)^2 along the line: minima at 1 and 2, both zero.
        let input = r#"{"f0": 4, "g": [-12], "H": [[26]], "beta": -36, "sigma": 4}"#;
        let v = value(&profile_json(input, 1001).unwrap());
        let r: Vec<f64> = v["r"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let psi: Vec<f64> = v["psi"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(r.len(), 1001);
        assert!(*r.last().unwrap() > 2.0);
        for (ri, pi) in r.iter().zip(&psi) {
            let exact = ((ri - 1.0) * (ri - 2.0)).powi(2);
            assert!((pi - exact).abs() < 1e-9 * (1.0 + exact), "r {ri}: {pi} vs {exact}");
        }
        assert!(v["psi_min"].as_f64().unwrap().abs() < 1e-5);
    }

    #[test]
    fn sweep_covers_the_interval() {
        let v = value(&sweep_json(QUARTIC, -24.0, 24.0, 5).unwrap());
        let rows = v.as_array().unwrap();
        let betas: Vec<f64> = rows.iter().map(|r| r["beta"].as_f64().unwrap()).collect();
        assert_eq!(betas, vec![-24.0, -12.0, 0.0, 12.0, 24.0]);
        assert_eq!(rows[0]["tight"], false);
        // Nonnegative beta always gives a tight relaxation.
        for row in &rows[2..] {
            assert_eq!(row["tight"], true, "{row}");
        }
        assert!(sweep_json(QUARTIC, 1.0, 0.0, 3).is_err());
    }
}
