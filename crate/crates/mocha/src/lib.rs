//! File formats, run configuration, experiment drivers, and the command
//! line for the `mocha-core` training and streaming decoding library.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod jsonl;
pub mod report;
pub mod version;

pub use error::{Error, Result};
