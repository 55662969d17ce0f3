//! Machine-readable and text reports.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

/// A float written with 17 significant digits so that parsing and
/// re-serializing reproduces the text exactly. Non-finite values become null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sci(pub f64);

impl Serialize for Sci {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sci {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Sci(Option::<f64>::deserialize(deserializer)?.unwrap_or(f64::NAN)))
    }
}

pub fn sci_vec(v: &DVector<f64>) -> Vec<Sci> {
    v.iter().map(|&x| Sci(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsReport {
    pub mode: String,
    pub iterations: usize,
    pub gap: Sci,
    pub primal_infeas: Sci,
    pub dual_infeas: Sci,
    pub wall_time: Sci,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineReport {
    pub start: Vec<Sci>,
    pub point: Vec<Sci>,
    pub value: Sci,
    pub grad_norm: Sci,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub tool_version: String,
    pub input_digest: String,
    pub id: Option<String>,
    pub seed: u64,
    pub n: usize,
    pub gamma_star: Sci,
    pub gamma_ipm: Sci,
    pub theta_star: Sci,
    pub mu_upper: Sci,
    pub err_abs: Sci,
    pub err_rel: Option<Sci>,
    pub tight: bool,
    pub reason: String,
    pub condition_value: Option<Sci>,
    pub s_star: Option<Vec<Sci>>,
    pub z_star: Option<Sci>,
    pub contains_zero: bool,
    pub particular: Option<Vec<Sci>>,
    pub nullspace_dim: usize,
    pub radius: Sci,
    pub members: Vec<Vec<Sci>>,
    pub stats: StatsReport,
    pub baseline: Option<BaselineReport>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckReport {
    pub tool_version: String,
    pub input_digest: String,
    pub point: Vec<Sci>,
    pub value: Sci,
    pub stationarity_residual: Sci,
    pub stationarity: bool,
    pub curvature: Sci,
    pub curvature_ok: bool,
    pub norm_margin: Sci,
    pub norm_condition: String,
    pub certified: bool,
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleReport {
    pub tool_version: String,
    pub input_digest: String,
    pub mu_star: Sci,
    pub radii: Vec<Sci>,
    pub minimizers: Vec<Vec<Sci>>,
    pub hard_case: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub n: usize,
    pub beta: Sci,
    pub instances: usize,
    pub solved: usize,
    pub failures: usize,
    pub tight: usize,
    pub mean_time: Sci,
    /// `"oracle"` or `"samples"`.
    pub reference: String,
    /// Largest `|γ* − μ*|` over tight instances (oracle), or the largest
    /// weak-duality violation `γ* − min M(samples)` clipped at zero.
    pub max_err_reference: Option<Sci>,
    /// Largest `|M(s*) − γ*|` over tight instances.
    pub max_err_abs: Option<Sci>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub tool_version: String,
    pub generator: String,
    pub seed: u64,
    pub mode: String,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

fn num(v: Sci) -> String {
    if v.0.is_finite() {
        format!("{:.16e}", v.0)
    } else {
        "n/a".into()
    }
}

fn opt(v: Option<Sci>) -> String {
    v.map_or_else(|| "n/a".into(), num)
}

fn vec_text(v: &[Sci]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key:<18}{value}");
}

impl SolveReport {
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        line(&mut o, "tool", &self.tool_version);
        line(&mut o, "input", &self.input_digest);
        if let Some(id) = &self.id {
            line(&mut o, "id", id);
        }
        line(&mut o, "n", self.n);
        line(&mut o, "verdict", format!("{} ({})", if self.tight { "tight" } else { "not tight" }, self.reason));
        line(&mut o, "gamma_star", num(self.gamma_star));
        line(&mut o, "gamma_ipm", num(self.gamma_ipm));
        line(&mut o, "theta_star", num(self.theta_star));
        line(&mut o, "mu_upper", num(self.mu_upper));
        line(&mut o, "err_abs", num(self.err_abs));
        line(&mut o, "err_rel", opt(self.err_rel));
        line(&mut o, "condition_value", opt(self.condition_value));
        line(&mut o, "s_star", self.s_star.as_deref().map_or_else(|| "n/a".into(), vec_text));
        line(&mut o, "contains_zero", self.contains_zero);
        line(&mut o, "z_star", opt(self.z_star));
        line(&mut o, "particular", self.particular.as_deref().map_or_else(|| "n/a".into(), vec_text));
        line(&mut o, "nullspace_dim", self.nullspace_dim);
        line(&mut o, "radius", num(self.radius));
        for m in &self.members {
            line(&mut o, "member", vec_text(m));
        }
        let st = &self.stats;
        line(
            &mut o,
            "ipm",
            format!(
                "mode {} iterations {} gap {:.3e} pinf {:.3e} dinf {:.3e} time {:.3}s",
                st.mode, st.iterations, st.gap.0, st.primal_infeas.0, st.dual_infeas.0, st.wall_time.0
            ),
        );
        line(&mut o, "seed", self.seed);
        if let Some(b) = &self.baseline {
            line(&mut o, "descent_start", vec_text(&b.start));
            line(&mut o, "descent_point", vec_text(&b.point));
            line(&mut o, "descent_value", num(b.value));
            line(&mut o, "descent_grad", format!("{:.3e} after {} iterations", b.grad_norm.0, b.iterations));
        }
        for d in &self.diagnostics {
            line(&mut o, "note", d);
        }
        o
    }
}

impl CheckReport {
    pub fn to_text(&self) -> String {
        let mark = |ok: bool| if ok { "holds" } else { "fails" };
        let mut o = String::new();
        line(&mut o, "tool", &self.tool_version);
        line(&mut o, "input", &self.input_digest);
        line(&mut o, "point", vec_text(&self.point));
        line(&mut o, "value", num(self.value));
        line(&mut o, "stationarity", format!("{} (residual {:.3e})", mark(self.stationarity), self.stationarity_residual.0));
        line(&mut o, "curvature", format!("{} (lambda_min {:.6e})", mark(self.curvature_ok), self.curvature.0));
        line(&mut o, "norm_condition", format!("{} (beta + 3 sigma |s| = {:.6e})", self.norm_condition, self.norm_margin.0));
        line(&mut o, "certified", self.certified);
        line(&mut o, "unique", self.unique);
        o
    }
}

impl OracleReport {
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        line(&mut o, "tool", &self.tool_version);
        line(&mut o, "input", &self.input_digest);
        line(&mut o, "mu_star", num(self.mu_star));
        line(&mut o, "radii", vec_text(&self.radii));
        for m in &self.minimizers {
            line(&mut o, "minimizer", vec_text(m));
        }
        line(&mut o, "hard_case", self.hard_case);
        o
    }
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(
            o,
            "{} generator {} seed {} mode {} threads {}",
            self.tool_version, self.generator, self.seed, self.mode, self.threads
        );
        let _ = writeln!(
            o,
            "{:>6} {:>8} {:>6} {:>6} {:>6} {:>6} {:>11} {:>8} {:>11} {:>11}",
            "n", "beta", "count", "solved", "failed", "tight", "mean_time", "ref", "err_ref", "err_abs"
        );
        for r in &self.rows {
            let e = |v: Option<Sci>| v.map_or_else(|| "n/a".into(), |x| format!("{:.3e}", x.0));
            let _ = writeln!(
                o,
                "{:>6} {:>8} {:>6} {:>6} {:>6} {:>6} {:>10.4}s {:>8} {:>11} {:>11}",
                r.n,
                format!("{}", r.beta.0),
                r.instances,
                r.solved,
                r.failures,
                r.tight,
                r.mean_time.0,
                r.reference,
                e(r.max_err_reference),
                e(r.max_err_abs)
            );
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_round_trips_exactly() {
        for v in [0.1, -1281.5925936, 1e-300, -0.0, 5e-324, f64::MAX] {
            let s = serde_json::to_string(&Sci(v)).unwrap();
            let back: Sci = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0.to_bits(), v.to_bits(), "{s}");
            assert_eq!(serde_json::to_string(&back).unwrap(), s);
        }
        assert_eq!(serde_json::to_string(&Sci(f64::NAN)).unwrap(), "null");
    }

    #[test]
    fn sci_has_seventeen_significant_digits() {
        let s = serde_json::to_string(&Sci(-5.2479)).unwrap();
        let mantissa = s.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
        assert_eq!(mantissa.len(), 17, "{s}");
    }
}
