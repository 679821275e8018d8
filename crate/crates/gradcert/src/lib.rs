//! File formats, experiment configuration and the `gradcert` command line on
//! top of `gradcert-core`.

pub mod cli;
pub mod config;
pub mod demo;
pub mod error;
pub mod evaluate;
pub mod idx;
pub mod masks;
pub mod model_io;
mod par;
pub mod report;
pub mod tabular;

pub use config::ExperimentConfig;
pub use error::{AppError, AppResult, FormatError};
