#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod balanced;
pub mod calibration;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod math;
pub mod metric;
pub mod path;
pub mod solver;

pub use error::{Error, Factor, Result};
