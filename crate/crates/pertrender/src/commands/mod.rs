//! The subcommands. Each one reads a validated [`Config`](crate::config::Config)
//! and writes its artifacts under the configured output directory.

pub mod bench;
pub mod gradcheck;
pub mod pose_opt;
pub mod render;

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
