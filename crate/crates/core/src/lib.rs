//! Geometric attitude tracking for small aerobatic helicopters with
//! first-order rotor dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod control;
mod csvfmt;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod model;
pub mod so3;
pub mod trajectory;

pub use error::{Error, Result};
