//! Structural model of joint export and product-innovation decisions under
//! trade liberalization: static firm problem, dynamic choice solver,
//! synthetic panels, the four-step estimator and counterfactuals.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod counterfactual;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod model;
pub mod optim;
pub mod panel;
pub mod pipeline;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
