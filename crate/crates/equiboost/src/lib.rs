//! File formats, checkpoints, training and the command-line driver for
//! equivariant boosting conformer generation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod graph_io;
pub mod pipeline;
pub mod store;
pub mod train;
pub mod xyz;

pub use error::{AppError, AppResult, ParseError};
