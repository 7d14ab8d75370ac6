//! Skeletal motion encoding and masked multi-entity transformers for
//! basketball tracking data, with a synthetic play generator and a linear
//! probing harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod config;
pub mod container;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod par;
pub mod play;
pub mod probe;
pub mod real;
pub mod train;
pub mod transformer;
pub mod verify;

pub use error::{Error, Result};
pub use par::Exec;
pub use real::{Precision, Real};
