//! Problem and point files.
//!
//! ```toml
//! id = "example"          # optional
//! comment = "free text"   # optional
//! n = 2
//! f0 = 0.0
//! beta = -24.0
//! sigma = 4.0
//! g = [0.0, 0.0]
//! H = [8.0, 0.0, 0.0, 8.0]   # row-major, or upper triangle with layout = "upper"
//! layout = "dense"
//! # W = [...]              # optional weight, same layouts via w_layout
//! ```
//!
//! Numbers may be TOML floats or integers, or strings holding a decimal or
//! hexadecimal float (`"0x1.8p1"`). Unknown keys are rejected.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use toml::Spanned;

use crate::model::CqrProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct FileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for FileError {}

fn locate(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

fn error_at(text: &str, span: Option<Range<usize>>, message: impl Into<String>) -> FileError {
    let (line, column) = span.map_or((1, 1), |s| locate(text, s.start));
    FileError { line, column, message: message.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Num {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Num {
    fn value(&self) -> std::result::Result<f64, String> {
        let v = match self {
            Num::Float(v) => *v,
            Num::Int(v) => *v as f64,
            Num::Text(s) => parse_float(s)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err("values must be finite".into())
        }
    }
}

/// Decimal or hexadecimal float text.
pub fn parse_float(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    if body.starts_with("0x") || body.starts_with("0X") {
        let v = hexf_parse::parse_hexf64(body, false).map_err(|e| format!("bad hex float {text:?}: {e}"))?;
        Ok(if neg { -v } else { v })
    } else {
        t.parse::<f64>().map_err(|_| format!("bad number {text:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Dense,
    Upper,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    id: Option<String>,
    comment: Option<String>,
    n: Spanned<usize>,
    f0: Spanned<Num>,
    beta: Spanned<Num>,
    sigma: Spanned<Num>,
    g: Spanned<Vec<Num>>,
    #[serde(rename = "H")]
    h: Spanned<Vec<Num>>,
    #[serde(default)]
    layout: Layout,
    #[serde(rename = "W")]
    w: Option<Spanned<Vec<Num>>>,
    #[serde(default)]
    w_layout: Layout,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    #[allow(dead_code)]
    id: Option<String>,
    s: Spanned<Vec<Num>>,
}

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub id: Option<String>,
    pub comment: Option<String>,
    pub problem: CqrProblem,
}

fn scalar(text: &str, v: &Spanned<Num>) -> std::result::Result<f64, FileError> {
    v.get_ref().value().map_err(|m| error_at(text, Some(v.span()), m))
}

fn vector(text: &str, v: &Spanned<Vec<Num>>) -> std::result::Result<Vec<f64>, FileError> {
    v.get_ref()
        .iter()
        .map(|x| x.value())
        .collect::<std::result::Result<_, _>>()
        .map_err(|m| error_at(text, Some(v.span()), m))
}

fn matrix(text: &str, key: &str, v: &Spanned<Vec<Num>>, n: usize, layout: Layout) -> std::result::Result<DMatrix<f64>, FileError> {
    let vals = vector(text, v)?;
    let expected = match layout {
        Layout::Dense => n * n,
        Layout::Upper => n * (n + 1) / 2,
    };
    if vals.len() != expected {
        return Err(error_at(
            text,
            Some(v.span()),
            format!("{key} has {} entries, expected {expected} for n = {n} ({layout:?} layout)", vals.len()),
        ));
    }
    let m = match layout {
        Layout::Dense => {
            let m = DMatrix::from_row_slice(n, n, &vals);
            let asym = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .fold(0.0f64, |acc, (i, j)| acc.max((m[(i, j)] - m[(j, i)]).abs()));
            let scale = m.amax().max(1.0);
            if asym > 1e-12 * scale {
                return Err(error_at(text, Some(v.span()), format!("{key} is not symmetric (max |Mij − Mji| = {asym:e})")));
            }
            m
        }
        Layout::Upper => {
            let mut m = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    m[(i, j)] = vals[k];
                    m[(j, i)] = vals[k];
                    k += 1;
                }
            }
            m
        }
    };
    Ok(m)
}

fn toml_error(text: &str, e: toml::de::Error) -> FileError {
    error_at(text, e.span(), e.message().to_string())
}

pub fn parse_problem(text: &str) -> std::result::Result<ProblemFile, FileError> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    let n = *raw.n.get_ref();
    if n == 0 {
        return Err(error_at(text, Some(raw.n.span()), "n must be positive"));
    }
    let g = vector(text, &raw.g)?;
    if g.len() != n {
        return Err(error_at(text, Some(raw.g.span()), format!("g has {} entries, expected {n}", g.len())));
    }
    let h = matrix(text, "H", &raw.h, n, raw.layout)?;
    let sigma = scalar(text, &raw.sigma)?;
    if sigma < 0.0 {
        return Err(error_at(text, Some(raw.sigma.span()), "sigma must be nonnegative"));
    }
    let problem = CqrProblem::new(scalar(text, &raw.f0)?, DVector::from_vec(g), h, scalar(text, &raw.beta)?, sigma)
        .map_err(|e| error_at(text, None, e.to_string()))?;
    let problem = match &raw.w {
        None => problem,
        Some(w) => {
            let w_mat = matrix(text, "W", w, n, raw.w_layout)?;
            problem.with_weight(w_mat).map_err(|e| error_at(text, Some(w.span()), e.to_string()))?
        }
    };
    Ok(ProblemFile { id: raw.id, comment: raw.comment, problem })
}

/// A point file holds `s = [...]`.
pub fn parse_point(text: &str) -> std::result::Result<DVector<f64>, FileError> {
    let raw: RawPoint = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    Ok(DVector::from_vec(vector(text, &raw.s)?))
}

/// Renders a problem in the file format, with every number as a hex float so
/// the file reproduces the data bit for bit.
pub fn write_problem(problem: &CqrProblem, id: Option<&str>) -> String {
    let hex = |v: f64| format!("\"{}\"", hex_float(v));
    let list = |vals: &mut dyn Iterator<Item = f64>| vals.map(hex).collect::<Vec<_>>().join(", ");
    let n = problem.dim();
    let mut out = String::new();
    if let Some(id) = id {
        out.push_str(&format!("id = {id:?}\n"));
    }
    out.push_str(&format!("n = {n}\nf0 = {}\nbeta = {}\nsigma = {}\n", hex(problem.f0), hex(problem.beta), hex(problem.sigma)));
    out.push_str(&format!("g = [{}]\n", list(&mut problem.g.iter().copied())));
    out.push_str("layout = \"upper\"\n");
    let upper = |m: &DMatrix<f64>| (0..n).flat_map(move |i| (i..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect::<Vec<_>>();
    out.push_str(&format!("H = [{}]\n", list(&mut upper(&problem.h).into_iter())));
    if let Some(w) = &problem.w {
        out.push_str("w_layout = \"upper\"\n");
        out.push_str(&format!("W = [{}]\n", list(&mut upper(w).into_iter())));
    }
    out
}

/// Exact hexadecimal rendering of a finite float, e.g. `-0x1.8p1`.
pub fn hex_float(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0x0p0".into() } else { "0x0p0".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{mant:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e}")
    }
}
