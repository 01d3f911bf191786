// Negated float comparisons are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crlb;
pub mod error;
pub mod harness;
pub mod estimator;
pub mod map;
pub mod matcher;
pub mod sensor;

pub use error::{Error, Result};
