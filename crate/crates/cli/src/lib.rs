//! Configuration, presets, command dispatch and file output for `synccool`.

pub mod commands;
pub mod config;
pub mod output;
pub mod presets;

pub use commands::{execute, run_all, spectrum_command, ErrorReport, RunMetadata, RunOptions, SpectrumRequest};
pub use config::{Engine, RunConfig};
