//! Topology optimization data engine: finite elements on regular grids,
//! the SIMP optimizer, stress post-processing, parametric problem families
//! and the dataset container.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fem;
pub mod problems;
pub mod simp;
pub mod stress;

pub use error::{Error, Result};
