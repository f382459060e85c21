//! Command-line pipeline: generate → align → train → reproduce → evaluate,
//! with every stage reading and writing a run directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod via;

pub use cli::run;
pub use config::RunConfig;
pub use error::CliError;
