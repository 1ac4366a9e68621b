//! Command implementations behind the `mmht` binary.

pub mod ablate;
pub mod dataset;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod infer;
pub mod run_config;
pub mod train;

pub use error::{CliError, Result};
