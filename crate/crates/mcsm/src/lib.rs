//! File formats, dataset manifests, run configuration and the commands of
//! the `mcsm` tool, on top of the numerical core in `mcsm-core`.

pub mod commands;
pub mod config;
pub mod format;
pub mod manifest;
