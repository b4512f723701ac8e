//! Command-line front end, checkpoint format and report writers for `gstnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod netspec;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
