//! Planning and simulation toolkit for co-scheduling the forward pass of one
//! micro-batch with the backward pass of another on the same devices.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comm;
pub mod config;
pub mod cost;
pub mod error;
pub mod estimate;
pub mod io;
pub mod memory;
pub mod ops;
pub mod pairing;
pub mod pipeline;
pub mod profile;
pub mod roofline;
pub mod search;
pub mod template;

pub use error::{Error, Result};
