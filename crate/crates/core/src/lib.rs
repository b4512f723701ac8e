//! Grouped spatial-temporal (GST) convolution networks for video clips.
//!
//! Everything here is pure computation over `alloc` collections: tensor
//! kernels with analytic gradients, the block families compared against GST,
//! ResNet assembly, the parameter/MAC cost model, a synthetic
//! temporal-reasoning dataset, SGD training and the batch-norm attribution
//! diagnostic. File formats and the command line live in the `gstnet` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod blocks;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod ratio;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ratio::Ratio;
pub use tensor::{Shape5, Tensor5};
