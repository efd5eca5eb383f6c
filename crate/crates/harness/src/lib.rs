//! Experiment driver for the contrastive token re-weighting workbench:
//! config loading, file formats and the sweeps behind the `cal` binary.

pub mod checkpoint;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod experiments;
pub mod outputs;

pub use error::{HarnessError, Result};
