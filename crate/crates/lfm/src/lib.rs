//! Files, configuration and the experiment driver around `lfm-core`.
//!
//! * [`io`]: the `LFMD` dataset container, `LFMW` weight files and the
//!   architecture text form.
//! * [`config`]: the TOML experiment schema with command-line overrides.
//! * [`metrics`]: line-delimited JSON records, one per epoch.
//! * [`experiment`]: search then evaluation per seed, ablation tables.
//! * [`diagnostics`]: gradient and hypergradient self-checks.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;

pub use error::{Error, Result};
pub use lfm_core as core;
