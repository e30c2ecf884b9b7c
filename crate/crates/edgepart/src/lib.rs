//! File formats, scenario loading and the command-line front end for
//! `edgepart-core`.
//!
//! * [`manifest_io`]: JSON-lines model manifests and the bundled MobileNetV2.
//! * [`config_io`]: TOML scheduler configurations and simulation scenarios.
//! * [`report_io`]: canonical JSON reports, CSV export and comparison tables.
//! * [`timing`]: wall-clock selection timing and a shared scheduler handle.

pub mod config_io;
pub mod error;
pub mod manifest_io;
pub mod report_io;
pub mod timing;

pub use error::{Error, Result};

/// Seed used when neither the command line nor the scenario gives one.
pub const DEFAULT_SEED: u64 = 42;
