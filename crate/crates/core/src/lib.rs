//! Knowledge-graph-driven semantic communication for object detection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codec;
pub mod detector;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod kg;
pub mod numeric;
pub mod pyramid;
pub mod seeds;

pub use error::{Error, Result};
