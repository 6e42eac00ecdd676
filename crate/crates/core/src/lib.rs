pub mod baseline;
pub mod clustergan;
pub mod config;
pub mod data;
pub mod divisive;
pub mod error;
pub mod fedsim;
pub mod hypcluster;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rng;

pub use error::{Error, Result};

/// Cluster identifiers are 1-based and stable for the lifetime of a run.
pub type ClusterId = u32;
