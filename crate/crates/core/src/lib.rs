//! Individual mortality-risk distributions from a Bayesian hierarchical
//! logistic model, and tools to measure, compare, adjust and decompose
//! inequality in them. Every summary is computed per posterior draw and then
//! aggregated into posterior intervals.

pub mod adjust;
pub mod anova;
pub mod compare;
pub mod data;
pub mod error;
pub mod manifest;
pub mod measures;
pub mod model;
pub mod parallel;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
