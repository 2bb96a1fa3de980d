//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by signal generation, analysis, simulation, and file I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two objects that must share a shape or band plan do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input excitation has no usable power in a frequency band.
    #[error("degenerate excitation in band {band} (f_x = {f_x_hz} Hz): |G_u| = {magnitude}")]
    DegenerateExcitation {
        band: usize,
        f_x_hz: f64,
        magnitude: f64,
    },

    /// A recorded signal could not be aligned to the commanded stimulus.
    #[error("alignment failed: {0}")]
    Alignment(String),

    /// A statistical operation received degenerate input.
    #[error("statistics error: {0}")]
    Statistics(String),

    /// The simulated body exceeded the fall guard.
    #[error("fall detected at t = {time_s:.3} s (|sway| reached {sway_rad:.3} rad)")]
    Fall { time_s: f64, sway_rad: f64 },

    /// Imported trial data is malformed.
    #[error("ingest error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    /// A pipeline stage failed; the stage name says where.
    #[error("pipeline stage `{stage}`: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> CoreError {
        CoreError::Pipeline {
            stage,
            source: Box::new(self),
        }
    }

    /// Name of the pipeline stage this error was tagged with, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            CoreError::Pipeline { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// True for errors caused by bad configuration or malformed input
    /// rather than by the analysis itself.
    pub fn is_validation(&self) -> bool {
        match self {
            CoreError::Config(_)
            | CoreError::Dimension(_)
            | CoreError::Ingest { .. }
            | CoreError::Io(_)
            | CoreError::Csv(_)
            | CoreError::Json(_) => true,
            CoreError::Pipeline { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// True when the underlying cause is a fall of the simulated body.
    pub fn is_fall(&self) -> bool {
        match self {
            CoreError::Fall { .. } => true,
            CoreError::Pipeline { source, .. } => source.is_fall(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
