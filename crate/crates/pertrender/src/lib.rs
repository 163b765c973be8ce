//! File formats, experiment configuration and the subcommands of the
//! `pertrender` binary, built on `pertrender-core`.

pub mod commands;
pub mod config;
mod error;
pub mod imageio;
pub mod memory;
pub mod obj;
pub mod report;

pub use config::Config;
pub use error::{Error, Result};
