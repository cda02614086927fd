//! Configuration, dispatch and plotting behind the `chemostat-kit` binary.

// `!(x > 0.0)` is deliberate: it rejects NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod plot;
pub mod run;

pub use config::{from_value, load_config, ConfigError, RunConfig};
pub use run::{dispatch, run_from_file, CliError, Command, Outcome};
