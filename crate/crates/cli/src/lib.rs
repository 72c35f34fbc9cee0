//! Pipeline orchestration behind the `rsd` binary.

pub mod bundle;
pub mod config;
pub mod fsutil;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, RunOutcome};
pub use report::{emit_report, Report};
