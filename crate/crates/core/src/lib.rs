//! Teacher-student knowledge transfer at desk scale.
//!
//! A student network learns from a frozen teacher's soft labels on unlabeled
//! images, then from conditional soft/hard targets on the labeled set, then
//! from hard labels alone.

pub mod autodiff;
pub mod checksum;
mod codec;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experiment;
mod kernels;
pub mod model;
pub mod rng;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
