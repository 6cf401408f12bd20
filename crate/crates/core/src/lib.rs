//! Likelihood-free variational autoencoders trained with the energy score.
//!
//! The crate provides a small reverse-mode autodiff engine ([`tensor`]),
//! MLP encoder/decoder networks ([`nets`]), the training objectives
//! ([`losses`]), Adam training with checkpointing ([`train`]), the diagnostic
//! battery ([`eval`]), dataset generators and file formats ([`data`]), and the
//! command-line harness ([`cli`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod random;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
