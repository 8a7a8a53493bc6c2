//! End-to-end DFPD pipeline for the pendulum benchmark: configuration,
//! the stages behind each `dfpd` subcommand, and plot-data aggregation.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{PipelineConfig, System, TransitionSource};
pub use error::{Error, Result};
pub use pipeline::{Evaluation, Pipeline};
