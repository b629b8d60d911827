//! Configuration, stage orchestration and artifact output for the `ncs`
//! command-line tool.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use config::ToolkitConfig;
pub use error::CliError;
pub use pipeline::run_pipeline;

/// Overrides `output_dir` from the config when set.
pub const OUTPUT_DIR_ENV: &str = "NCS_OUTPUT_DIR";
