//! Rotation-invariant texture features from rotatable filter banks.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod io;
pub mod net;
pub mod rotation;
pub mod rotconv;
pub mod shallowml;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
