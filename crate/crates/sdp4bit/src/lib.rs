//! Command-line front end for `sdp4bit-core`: configuration files, CSV
//! traces, binary chunk dumps and a thread-pool executor.

pub mod cli;
pub mod config;
pub mod dump;
pub mod error;
pub mod executor;
pub mod trace;

pub use error::CliError;
