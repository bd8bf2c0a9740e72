//! Residual-randomization inference for high-dimensional linear models.
//!
//! The pipeline fits a sparse pilot regression ([`lasso`]), chooses a
//! debiasing row by a robustness-first linear program ([`clime`],
//! [`selection`]), builds a randomization distribution from error-invariance
//! maps ([`actions`]) and turns it into p-values and confidence intervals
//! ([`inference`]). [`diagnostics`] and [`sim`] work on synthetic data where
//! the true coefficients and errors are known.

pub mod actions;
pub mod clime;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod inference;
pub mod lasso;
pub mod selection;
pub mod sim;

pub use actions::{GroupAction, GroupActionSet, Invariance, Partition};
pub use clime::{DebiasRow, GramMatrix};
pub use data::Dataset;
pub use error::{Error, Result};
pub use exec::Execution;
pub use inference::{ConfidenceInterval, Hypothesis, RandomizationResult};
pub use lasso::{LassoFit, LassoOptions};
pub use selection::{SelectionConfig, SelectionMode, SelectionResult};
