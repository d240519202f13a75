//! Communication-efficient distributed sparse linear discriminant analysis.
//!
//! Each worker fits a Dantzig-type sparse discriminant direction on its own
//! shard, debiases it with a CLIME precision estimate and ships the
//! debiased vector (plus its two class means) to the master in a single
//! round. The master averages and hard-thresholds.

pub mod aggregate;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod solver;
pub mod worker;

pub use error::{Error, Result};
