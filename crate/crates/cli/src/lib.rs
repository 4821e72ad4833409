//! Stage wiring for the `geo-forge` command line.

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod stage;
pub mod stages;

pub use config::{LinkMode, PipelineConfig};
pub use pipeline::{run_pipeline, run_stages, PipelineReport, Status};
pub use stage::StageId;
