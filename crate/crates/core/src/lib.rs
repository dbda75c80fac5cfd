// Negated comparisons reject NaN; indexed loops mirror the row/column math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augview;
pub mod cli;
pub mod diffcore;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod pointcore;
pub mod probe;
pub mod sched;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
