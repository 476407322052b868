//! Exact solvers for non-linear optimal multiple stopping over Bermudan
//! stopping strategies on finite scenario trees.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod axioms;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod multistop;
pub mod oracle;
pub mod payoff;
pub mod report;
pub mod snell;
pub mod space;

pub use error::{Error, Result};
