//! Frictional many-to-one matching markets with heterogeneous preferences
//! and size-dependent meeting rates.

// `!(x > 0.0)` is used on purpose to reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuum;
pub mod efficiency;
pub mod error;
pub mod estimation;
pub mod market;
pub mod simulate;
pub mod two_firm;

pub use error::{Error, Result};
