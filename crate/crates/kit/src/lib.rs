//! Runtime companion to `unissl-core`: audio front end, checkpoints,
//! configuration and the pretrain → transfer → report pipeline.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod registry_file;

pub use crate::error::{KitError, Result};
