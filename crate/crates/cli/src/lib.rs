//! Library side of the `streamres` binary: configuration, stage wiring and
//! the benchmark grid. The binary is a thin argument-parsing shell over
//! these functions so integration tests can drive them directly.

pub mod bench;
pub mod config;
pub mod pipeline;

pub use config::{stage_seed, PipelineConfig, SourceConfig};
pub use pipeline::{cmd_run, RunSummary};
