//! Global solver for cubic-quartic regularized quadratic models.

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#[cfg(feature = "cli")]
pub mod cli;
pub mod descent;
pub mod error;
pub mod extract;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod sdp;

pub use error::{CqrError, Result};
pub use extract::{MinimizerSet, Reason, TightnessReport};
pub use model::{apply_w_transform, normalize_scale, normalize_sigma, BackMap, CqrProblem, EvalBundle};
pub use pipeline::{minimize, solve_global, GlobalSolution, SolveOptions};
