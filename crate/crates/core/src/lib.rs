//! Stream sampling and clustering toolkit.
//!
//! The pipeline stages, in composition order:
//!
//! - [`ingest`] — file readers and a synthetic generator producing [`Record`]s.
//! - [`sampling`] — uniform and weighted reservoir sampling with log-domain keys.
//! - [`multires`] — one reservoir per sub-stream under a shared memory budget.
//! - [`resmeans`] — windowed k-means with warm starts and SSE diagnostics.
//! - [`events`] — distance-threshold outlier detection, event scores, P/R/F.
//! - [`kgexport`] — Turtle and DOT serialization of windows, clusters and events.

pub mod events;
pub mod ingest;
pub mod kgexport;
pub mod multires;
pub mod resmeans;
pub mod sampling;

pub use ingest::Record;
