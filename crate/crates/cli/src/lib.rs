//! Stage implementations and the run orchestrator behind the `polarfield` binary.

pub mod pipeline;
pub mod stages;

pub use pipeline::{run_pipeline, RunConfig, RunReport};
pub use stages::{Context, Stage, StageError};
