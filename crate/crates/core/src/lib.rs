//! Benchmarking toolkit for standing balance control.
//!
//! The crate covers the full measurement chain used to compare a balance
//! controller against human reference behavior:
//!
//! - [`stimulus`]: pseudorandom ternary support-tilt profiles,
//! - [`spectral`]: peak extraction and band-averaged frequency responses,
//! - [`scoring`]: weighted distance from human reference statistics,
//! - [`plant`]: sagittal multi-link body on a tilting support,
//! - [`control`]: disturbance-compensating joint-servo controller,
//! - [`sim`]: closed-loop trial simulation,
//! - [`pipeline`]: alignment, analysis, scoring, reference populations,
//! - [`io`]: recording CSV and reference/report JSON formats.

pub mod control;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod plant;
pub mod scoring;
pub mod signal;
pub mod sim;
pub mod spectral;
pub mod stimulus;

pub use control::{
    deadband, ControlledVariable, ControllerPreset, DecController, DecParams, DisturbanceEstimates,
    FootInSpaceEstimator, JointGains,
};
pub use error::{CoreError, Result};
pub use io::{
    ingest_recording, load_reference, load_report, save_recording, save_reference, save_report,
    write_recording_csv, IngestSchema,
};
pub use pipeline::{
    align, analyze, apply_lag, estimate_energy, passthrough_recording, plan_for_recording,
    recording_frf, surrogate_reference, AnalyzeOptions, BenchmarkReport, EnergyReport,
    SurrogateConfig,
};
pub use plant::{
    NoiseConfig, PlantModel, PlantParams, PlantState, SegmentParams, SensorReadout, SupportCommand,
};
pub use scoring::{
    cdf_position, expand_frf, fit_reference, score, score_with, weighted_distance, BootstrapConfig,
    CdfEstimate, Provenance, ReferenceStats, ScoreReport,
};
pub use signal::{SampledSignal, Unit};
pub use sim::{run_trial, RecordingSource, TrialConfig, TrialMeta, TrialRecording};
pub use spectral::{
    band_average, estimate_frf, extract_peaks, weights_from_input, BandPlan, BandSpectrum, Frf,
    WeightVector,
};
pub use stimulus::{generate_prts, peak_frequencies, PrtsConfig};
