//! IO layer and command implementations for the scatterpos toolkit: dataset
//! and checkpoint files with integrity digests, calibration JSON, CSV
//! reports and the subcommands wired together in `main`.

pub mod commands;
pub mod error;
pub mod persistence;
