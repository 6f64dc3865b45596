pub mod config;
pub mod manifest;
pub mod presets;
pub mod report;
pub mod stages;

pub use config::PipelineConfig;
pub use manifest::StageManifest;
pub use stages::{run_stage, PipelineError, Stage};
