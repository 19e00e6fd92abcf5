//! Desk-scale laboratory for learning to learn.
//!
//! Two models of bias learning live side by side:
//!
//! - the empirical-process model: an environment of related regression
//!   tasks sharing a hidden feature map ([`environment`]), a shared-feature
//!   network trained jointly on many tasks ([`featnet`]), and calculators for
//!   the sample-complexity and covering-number bounds ([`bounds`]);
//! - the hierarchical Bayes model: an exact Gaussian-linear (a,b)-model with
//!   conjugate joint posteriors and cumulative information risk
//!   ([`hierbayes`]).
//!
//! All randomness is driven by explicit 64-bit seeds split through
//! [`seed::derive`], so every result is reproducible bit for bit.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod data;
pub mod environment;
pub mod error;
pub mod feature_map;
pub mod featnet;
pub mod hierbayes;
pub mod seed;

pub use data::{Dataset, Example, LossKind, MultiTaskSample};
pub use error::{Error, Result};
