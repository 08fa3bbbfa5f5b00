//! Collaborative filtering recast as kernel regression over a force-directed
//! layout of the user (or item) similarity graph.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod config;
pub mod error;
pub mod kernels;
pub mod layout;
pub mod pipeline;
pub mod quadrature;
pub mod ratings;
pub mod similarity;
pub mod synthetic;

pub use config::Config;
pub use error::{Error, Result};
pub use pipeline::{evaluate, CfModel, EvalReport, Method, Prediction};
