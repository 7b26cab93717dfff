#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod calibration;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nets;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};

/// Class label.
pub type ClassId = u32;
