//! Run configuration, artifact writing, and SVG plots.

pub mod config;
pub mod output;
pub mod plot;

pub use config::{parse_config, RunConfig};
pub use output::{ArtifactWriter, Header};
pub use plot::{emit_plot, PlotKind};
