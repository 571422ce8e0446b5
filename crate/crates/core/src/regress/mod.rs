//! Ordinary least squares with t-test inference and forward stepwise
//! selection.
//!
//! Predictors enter raw (no standardisation) so coefficients stay in the
//! units of the features. Standardise upstream if comparable magnitudes are
//! needed.

pub mod dist;
mod ols;
mod stepwise;

pub use ols::{adjusted_r2, ols_fit, DesignMatrix, OlsFit, RANK_TOLERANCE};
pub use stepwise::{stepwise_fit, stepwise_from_records, InterceptStats, RegressionModel, TermStats, DEFAULT_ALPHA};
