// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dde;
pub mod eqfree;
pub mod error;
pub mod forcing;
pub mod linalg;
pub mod manifold;
pub mod output;
pub mod scan;

pub use error::{Error, Result};
