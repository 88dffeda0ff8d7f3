//! Irrigation mapping with an ensemble of small U-Nets.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod compositing;
pub mod error;
pub mod evaluation;
pub mod geodata;
pub mod inference;
pub mod manifest;
pub mod synthgen;
pub mod tensor;
pub mod training;
pub mod unet;
pub mod workflow;

pub use error::{Error, Result};
