//! Presets, configuration, trace persistence and SVG plots.

pub mod config;
pub mod io;
pub mod plot;
pub mod presets;

use std::path::PathBuf;

use thiserror::Error;

use crate::engine::EngineError;
use crate::network::NetworkError;

pub use config::{load_config, InstanceSpec, RunConfig, TopologySpec};
pub use io::{read_trace, write_trace, TraceTable, TraceMeta, CSV_HEADER};
pub use plot::{emit_plot, render_svg, PlotOptions, PlotSeries};
pub use presets::{preset, PRESET_NAMES};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown preset `{0}` (expected ieee14, ieee57 or toy1)")]
    UnknownPreset(String),
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{column}` in {}", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("axis mismatch: {0}")]
    AxisMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}
