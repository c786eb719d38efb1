//! File formats, dataset tooling and the command-line front end for
//! [`scatsr_core`].
//!
//! * [`imageio`]: rasters (PNG/PNM) and the bit-exact `.sfr` float container;
//! * [`container`]: the binary container behind coefficient files, filter
//!   banks and checkpoints;
//! * [`manifest`]: hashed dataset manifests and patch extraction;
//! * [`config`]: the versioned TOML run configuration;
//! * [`commands`]: one function per CLI verb.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod imageio;
pub mod manifest;

pub use error::{CliError, CliResult};
