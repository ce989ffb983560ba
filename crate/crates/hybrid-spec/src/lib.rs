//! File formats, batch evaluation and the command line for
//! [`hybrid_spec_core`].

pub mod analyze;
pub mod calib;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod store;

pub use error::{AppError, Result};
