//! Learning discrete communication protocols among cooperative,
//! partially observable agents.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod analysis;
pub mod dru;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Gradient, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
