//! File formats: trial recordings as CSV with `# key=value` metadata
//! lines, reference statistics and analysis reports as versioned JSON.
//!
//! Recording CSV layout (version 1):
//!
//! ```text
//! # swaybench-recording v1
//! # source=simulated
//! # seed=42
//! # config_digest=<hex sha-256>
//! # preset=standard
//! # sample_rate_hz=100
//! # n_periods=2
//! # samples_per_period=2000
//! # warmup_periods=1
//! time_s,support_tilt_deg,measured_tilt_deg,com_sway_deg,joint1_angle_deg,...,joint1_torque_nm,...
//! 0,0,0,0,0,...
//! ```
//!
//! Numbers are written with the shortest representation that parses back
//! to the same value, so export followed by ingest reproduces every
//! sample bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pipeline::BenchmarkReport;
use crate::scoring::{Provenance, ReferenceStats};
use crate::signal::{SampledSignal, Unit};
use crate::sim::{RecordingSource, TrialMeta, TrialRecording, RECORDING_SCHEMA_VERSION};
use crate::spectral::{BandPlan, WeightVector};

/// Version of the reference statistics JSON file.
pub const REFERENCE_SCHEMA_VERSION: u32 = 1;

const RECORDING_BANNER: &str = "swaybench-recording";

/// Renders a recording in the CSV format above.
pub fn write_recording_csv(recording: &TrialRecording) -> Result<String> {
    recording.validate()?;
    let meta = &recording.meta;
    let mut out = String::new();
    let _ = writeln!(out, "# {RECORDING_BANNER} v{}", meta.schema_version);
    let source = match meta.source {
        RecordingSource::Simulated => "simulated",
        RecordingSource::Ingested => "ingested",
    };
    let _ = writeln!(out, "# source={source}");
    if let Some(seed) = meta.seed {
        let _ = writeln!(out, "# seed={seed}");
    }
    if let Some(digest) = &meta.config_digest {
        let _ = writeln!(out, "# config_digest={digest}");
    }
    if let Some(preset) = &meta.preset {
        let _ = writeln!(out, "# preset={preset}");
    }
    let _ = writeln!(out, "# sample_rate_hz={}", recording.sample_rate_hz());
    let _ = writeln!(out, "# n_periods={}", meta.n_periods);
    let _ = writeln!(out, "# samples_per_period={}", meta.samples_per_period);
    let _ = writeln!(out, "# warmup_periods={}", meta.warmup_periods);

    out.push_str("time_s,support_tilt_deg,measured_tilt_deg,com_sway_deg");
    for j in 0..recording.joint_angles_deg.len() {
        let _ = write!(out, ",joint{}_angle_deg", j + 1);
    }
    for j in 0..recording.joint_torques_nm.len() {
        let _ = write!(out, ",joint{}_torque_nm", j + 1);
    }
    out.push('\n');

    for k in 0..recording.n_samples() {
        let _ = write!(
            out,
            "{},{},{},{}",
            recording.stimulus_deg.time_at(k),
            recording.stimulus_deg.values[k],
            recording.measured_tilt_deg.values[k],
            recording.com_sway_deg.values[k]
        );
        for angle in &recording.joint_angles_deg {
            let _ = write!(out, ",{}", angle.values[k]);
        }
        for torque in &recording.joint_torques_nm {
            let _ = write!(out, ",{}", torque.values[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

fn annotate_io(path: &Path, e: std::io::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Writes a recording to `path` in the CSV format above.
pub fn save_recording(recording: &TrialRecording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv = write_recording_csv(recording)?;
    std::fs::write(path, csv).map_err(|e| annotate_io(path, e))
}

/// Column mapping and metadata fallbacks for ingesting trial CSV files.
///
/// The defaults match the format this library writes. Fields set to
/// `Some` override whatever the file's metadata lines say; `n_periods`
/// and `samples_per_period` must come from one of the two places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSchema {
    pub time_column: String,
    pub stimulus_column: String,
    pub measured_tilt_column: String,
    pub sway_column: String,
    /// Joint angle columns, ankle first. Empty means auto-detect
    /// `joint<N>_angle_deg` columns in ascending order.
    pub angle_columns: Vec<String>,
    /// Joint torque columns, ankle first. Empty means auto-detect
    /// `joint<N>_torque_nm` columns.
    pub torque_columns: Vec<String>,
    pub sample_rate_hz: Option<f64>,
    pub n_periods: Option<usize>,
    pub samples_per_period: Option<usize>,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            time_column: "time_s".into(),
            stimulus_column: "support_tilt_deg".into(),
            measured_tilt_column: "measured_tilt_deg".into(),
            sway_column: "com_sway_deg".into(),
            angle_columns: Vec::new(),
            torque_columns: Vec::new(),
            sample_rate_hz: None,
            n_periods: None,
            samples_per_period: None,
        }
    }
}

/// Maximum relative deviation of any sample interval from the nominal
/// spacing before a file is rejected as unevenly sampled.
pub const MAX_TIME_JITTER: f64 = 0.01;

fn ingest_err(row: usize, message: impl Into<String>) -> CoreError {
    CoreError::Ingest {
        row,
        message: message.into(),
    }
}

/// Parses a trial CSV into a validated recording with
/// [`RecordingSource::Ingested`]. Row numbers in errors count data rows
/// starting at 1; row 0 refers to the header or metadata.
pub fn ingest_recording_str(text: &str, schema: &IngestSchema) -> Result<TrialRecording> {
    let mut meta_pairs: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let Some(body) = line.strip_prefix('#') else {
            break;
        };
        let body = body.trim();
        if let Some(rest) = body.strip_prefix(RECORDING_BANNER) {
            let version = rest.trim().trim_start_matches('v');
            if version != RECORDING_SCHEMA_VERSION.to_string() {
                return Err(ingest_err(
                    0,
                    format!("unsupported recording version `{}`", rest.trim()),
                ));
            }
            continue;
        }
        if let Some((key, value)) = body.split_once('=') {
            meta_pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
    }
    let meta_get = |key: &str| -> Option<&str> {
        meta_pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let meta_usize = |key: &str| -> Result<Option<usize>> {
        meta_get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ingest_err(0, format!("metadata {key}={v} is not an integer")))
            })
            .transpose()
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(CoreError::from)?
        .iter()
        .map(str::to_string)
        .collect();

    let find_col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest_err(0, format!("column `{name}` not found")))
    };
    let time_col = find_col(&schema.time_column)?;
    let stim_col = find_col(&schema.stimulus_column)?;
    let tilt_col = find_col(&schema.measured_tilt_column)?;
    let sway_col = find_col(&schema.sway_column)?;

    let auto_detect = |prefix: &str, suffix: &str| -> Vec<usize> {
        let mut cols = Vec::new();
        for n in 1.. {
            let name = format!("{prefix}{n}{suffix}");
            match headers.iter().position(|h| h == &name) {
                Some(i) => cols.push(i),
                None => break,
            }
        }
        cols
    };
    let angle_cols: Vec<usize> = if schema.angle_columns.is_empty() {
        auto_detect("joint", "_angle_deg")
    } else {
        schema
            .angle_columns
            .iter()
            .map(|c| find_col(c))
            .collect::<Result<_>>()?
    };
    let torque_cols: Vec<usize> = if schema.torque_columns.is_empty() {
        auto_detect("joint", "_torque_nm")
    } else {
        schema
            .torque_columns
            .iter()
            .map(|c| find_col(c))
            .collect::<Result<_>>()?
    };

    let mut times = Vec::new();
    let mut stimulus = Vec::new();
    let mut tilt = Vec::new();
    let mut sway = Vec::new();
    let mut angles: Vec<Vec<f64>> = vec![Vec::new(); angle_cols.len()];
    let mut torques: Vec<Vec<f64>> = vec![Vec::new(); torque_cols.len()];

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(CoreError::from)?;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(col)
                .ok_or_else(|| ingest_err(row, format!("missing value for `{name}`")))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| ingest_err(row, format!("`{raw}` in `{name}` is not a number")))?;
            if !v.is_finite() {
                return Err(ingest_err(row, format!("`{name}` is not finite ({v})")));
            }
            Ok(v)
        };
        times.push(cell(time_col, &schema.time_column)?);
        stimulus.push(cell(stim_col, &schema.stimulus_column)?);
        tilt.push(cell(tilt_col, &schema.measured_tilt_column)?);
        sway.push(cell(sway_col, &schema.sway_column)?);
        for (dst, &col) in angles.iter_mut().zip(&angle_cols) {
            dst.push(cell(col, &headers[col])?);
        }
        for (dst, &col) in torques.iter_mut().zip(&torque_cols) {
            dst.push(cell(col, &headers[col])?);
        }
    }

    let n = times.len();
    if n < 2 {
        return Err(ingest_err(0, format!("only {n} data rows")));
    }

    let rate = match schema.sample_rate_hz {
        Some(r) => r,
        None => match meta_get("sample_rate_hz") {
            Some(v) => v.parse::<f64>().map_err(|_| {
                ingest_err(0, format!("metadata sample_rate_hz={v} is not a number"))
            })?,
            None => (n - 1) as f64 / (times[n - 1] - times[0]),
        },
    };
    if rate <= 0.0 || !rate.is_finite() {
        return Err(ingest_err(0, format!("sample rate {rate} is not usable")));
    }
    let dt = 1.0 / rate;
    for k in 1..n {
        let step = times[k] - times[k - 1];
        if ((step - dt) / dt).abs() > MAX_TIME_JITTER {
            return Err(ingest_err(
                k + 1,
                format!(
                    "sample interval {step} s deviates from the nominal {dt} s by more than {}%",
                    MAX_TIME_JITTER * 100.0
                ),
            ));
        }
    }

    let n_periods = schema
        .n_periods
        .or(meta_usize("n_periods")?)
        .ok_or_else(|| {
            ingest_err(
                0,
                "n_periods is in neither the file metadata nor the schema",
            )
        })?;
    let spp = schema
        .samples_per_period
        .or(meta_usize("samples_per_period")?)
        .ok_or_else(|| {
            ingest_err(
                0,
                "samples_per_period is in neither the file metadata nor the schema",
            )
        })?;
    let warmup = meta_usize("warmup_periods")?.unwrap_or(0);

    let skip = if n == n_periods * spp {
        0
    } else if warmup > 0 && n == (n_periods + warmup) * spp {
        warmup * spp
    } else {
        return Err(ingest_err(
            0,
            format!("{n} rows do not form {n_periods} periods of {spp} samples"),
        ));
    };

    let seed = meta_get("seed")
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| ingest_err(0, format!("metadata seed={v} is not an integer")))
        })
        .transpose()?;

    let t0 = times[skip];
    let make = |mut v: Vec<f64>, unit: Unit| -> Result<SampledSignal> {
        v.drain(..skip);
        SampledSignal::new(v, rate, unit, t0)
    };
    let recording = TrialRecording {
        stimulus_deg: make(stimulus, Unit::Degrees)?,
        measured_tilt_deg: make(tilt, Unit::Degrees)?,
        com_sway_deg: make(sway, Unit::Degrees)?,
        joint_angles_deg: angles
            .into_iter()
            .map(|v| make(v, Unit::Degrees))
            .collect::<Result<_>>()?,
        joint_torques_nm: torques
            .into_iter()
            .map(|v| make(v, Unit::NewtonMeters))
            .collect::<Result<_>>()?,
        meta: TrialMeta {
            schema_version: RECORDING_SCHEMA_VERSION,
            source: RecordingSource::Ingested,
            seed,
            config_digest: meta_get("config_digest").map(str::to_string),
            preset: meta_get("preset").map(str::to_string),
            n_periods,
            samples_per_period: spp,
            warmup_periods: warmup,
        },
    };
    recording.validate()?;
    Ok(recording)
}

/// Reads and parses a trial CSV file.
pub fn ingest_recording(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<TrialRecording> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    ingest_recording_str(&text, schema)
}

/// On-disk form of reference statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReferenceFile {
    schema_version: u32,
    /// Analysis peak frequencies, Hz.
    band_f_peak_hz: Vec<f64>,
    /// Per-band peak index sets.
    bands: Vec<Vec<usize>>,
    /// Mean response, all real parts then all imaginary parts.
    mu: Vec<f64>,
    /// Row-major covariance of the same layout.
    sigma: Vec<f64>,
    weights_raw: Vec<f64>,
    weights_normalized: Vec<f64>,
    sample_scores: Vec<f64>,
    n_subjects: usize,
    provenance: Provenance,
}

/// Serializes reference statistics to versioned JSON.
pub fn reference_to_json(stats: &ReferenceStats) -> Result<String> {
    stats.validate()?;
    let dim = stats.mu.len();
    let file = ReferenceFile {
        schema_version: REFERENCE_SCHEMA_VERSION,
        band_f_peak_hz: stats.plan.f_peak.clone(),
        bands: stats.plan.bands.clone(),
        mu: stats.mu.iter().cloned().collect(),
        sigma: (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| stats.sigma[(i, j)])
            .collect(),
        weights_raw: stats.weights.w.clone(),
        weights_normalized: stats.weights.normalized(),
        sample_scores: stats.sample_scores.clone(),
        n_subjects: stats.n_subjects,
        provenance: stats.provenance.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses reference statistics from versioned JSON.
pub fn reference_from_json(text: &str) -> Result<ReferenceStats> {
    let file: ReferenceFile = serde_json::from_str(text)?;
    if file.schema_version != REFERENCE_SCHEMA_VERSION {
        return Err(CoreError::Config(format!(
            "unsupported reference schema version {}",
            file.schema_version
        )));
    }
    let plan = BandPlan {
        f_peak: file.band_f_peak_hz,
        bands: file.bands,
    };
    plan.validate()?;
    let dim = file.mu.len();
    if file.sigma.len() != dim * dim {
        return Err(CoreError::Dimension(format!(
            "sigma has {} entries for a {dim}-dimensional mean",
            file.sigma.len()
        )));
    }
    if file.weights_raw.len() != plan.n_bands() {
        return Err(CoreError::Dimension(format!(
            "{} weights for {} bands",
            file.weights_raw.len(),
            plan.n_bands()
        )));
    }
    let weights = WeightVector {
        plan: plan.clone(),
        w: file.weights_raw,
    };
    let recomputed = weights.normalized();
    if file.weights_normalized.len() != recomputed.len()
        || file
            .weights_normalized
            .iter()
            .zip(&recomputed)
            .any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0))
    {
        return Err(CoreError::Config(
            "normalized weights are inconsistent with the raw weights".into(),
        ));
    }
    let stats = ReferenceStats {
        plan,
        mu: DVector::from_vec(file.mu),
        sigma: DMatrix::from_row_slice(dim, dim, &file.sigma),
        weights,
        sample_scores: file.sample_scores,
        n_subjects: file.n_subjects,
        provenance: file.provenance,
    };
    stats.validate()?;
    Ok(stats)
}

/// Writes reference statistics to a JSON file.
pub fn save_reference(stats: &ReferenceStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, reference_to_json(stats)?).map_err(|e| annotate_io(path, e))
}

/// Reads reference statistics from a JSON file.
pub fn load_reference(path: impl AsRef<Path>) -> Result<ReferenceStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    reference_from_json(&text)
}

/// Serializes an analysis report to JSON.
pub fn report_to_json(report: &BenchmarkReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Writes an analysis report to a JSON file.
pub fn save_report(report: &BenchmarkReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_to_json(report)?).map_err(|e| annotate_io(path, e))
}

/// Reads an analysis report from a JSON file.
pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    let report: BenchmarkReport = serde_json::from_str(&text)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{analyze, passthrough_recording, plan_for_recording, AnalyzeOptions};
    use crate::scoring::fit_reference;
    use crate::sim::{run_trial, TrialConfig};
    use crate::spectral::{extract_peaks, weights_from_input, BandPlan, Frf, WeightVector};
    use crate::stimulus::generate_prts;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy_recording() -> TrialRecording {
        let config = TrialConfig {
            noise: crate::pipeline::default_sensor_noise(),
            seed: 3,
            ..TrialConfig::default()
        };
        run_trial(&config).unwrap()
    }

    fn synthetic_reference(plan: &BandPlan) -> ReferenceStats {
        let cfg = crate::stimulus::PrtsConfig::default();
        let stim = generate_prts(&cfg).unwrap();
        let u = extract_peaks(&stim, plan, cfg.n_periods).unwrap();
        let weights: WeightVector = weights_from_input(&u, plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let frfs: Vec<Frf> = (0..12)
            .map(|_| Frf {
                plan: plan.clone(),
                h: (0..plan.n_bands())
                    .map(|_| Complex64::new(1.0 + noise.sample(&mut rng), noise.sample(&mut rng)))
                    .collect(),
            })
            .collect();
        fit_reference(&frfs, &weights).unwrap()
    }

    #[test]
    fn export_then_ingest_is_bit_exact() {
        let rec = noisy_recording();
        let text = write_recording_csv(&rec).unwrap();
        let back = ingest_recording_str(&text, &IngestSchema::default()).unwrap();

        assert_eq!(back.meta.source, RecordingSource::Ingested);
        assert_eq!(back.meta.seed, rec.meta.seed);
        assert_eq!(back.meta.config_digest, rec.meta.config_digest);
        assert_eq!(back.meta.n_periods, rec.meta.n_periods);
        assert_eq!(back.meta.samples_per_period, rec.meta.samples_per_period);
        assert_eq!(back.stimulus_deg.values, rec.stimulus_deg.values);
        assert_eq!(back.measured_tilt_deg.values, rec.measured_tilt_deg.values);
        assert_eq!(back.com_sway_deg.values, rec.com_sway_deg.values);
        assert_eq!(back.joint_angles_deg.len(), rec.joint_angles_deg.len());
        for (a, b) in back.joint_angles_deg.iter().zip(&rec.joint_angles_deg) {
            assert_eq!(a.values, b.values);
        }
        for (a, b) in back.joint_torques_nm.iter().zip(&rec.joint_torques_nm) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn ingested_copy_analyzes_identically() {
        let rec = noisy_recording();
        let plan = plan_for_recording(&rec).unwrap();
        let reference = synthetic_reference(&plan);
        let options = AnalyzeOptions::default();

        let direct = analyze(&rec, &reference, &options).unwrap();
        let text = write_recording_csv(&rec).unwrap();
        let back = ingest_recording_str(&text, &IngestSchema::default()).unwrap();
        let indirect = analyze(&back, &reference, &options).unwrap();

        assert_eq!(
            report_to_json(&direct).unwrap(),
            report_to_json(&indirect).unwrap()
        );
    }

    #[test]
    fn ingest_reports_bad_cell_with_row_number() {
        let rec = noisy_recording();
        let text = write_recording_csv(&rec).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let data_start = lines.iter().position(|l| !l.starts_with('#')).unwrap() + 1;
        let broken_line: String = {
            let mut cells: Vec<String> = lines[data_start + 16]
                .split(',')
                .map(str::to_string)
                .collect();
            cells[3] = "bogus".into();
            cells.join(",")
        };
        lines[data_start + 16] = &broken_line;
        let broken_text = lines.join("\n");
        let err = ingest_recording_str(&broken_text, &IngestSchema::default()).unwrap_err();
        match err {
            CoreError::Ingest { row, ref message } => {
                assert_eq!(row, 17);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ingest_rejects_nonfinite_cell() {
        let rec = noisy_recording();
        let text = write_recording_csv(&rec).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let data_start = lines.iter().position(|l| !l.starts_with('#')).unwrap() + 1;
        let mut cells: Vec<String> = lines[data_start + 2]
            .split(',')
            .map(str::to_string)
            .collect();
        cells[2] = "NaN".into();
        lines[data_start + 2] = cells.join(",");
        let err = ingest_recording_str(&lines.join("\n"), &IngestSchema::default()).unwrap_err();
        match err {
            CoreError::Ingest { row, ref message } => {
                assert_eq!(row, 3);
                assert!(message.contains("finite"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ingest_rejects_uneven_sampling() {
        let rec = noisy_recording();
        let text = write_recording_csv(&rec).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let data_start = lines.iter().position(|l| !l.starts_with('#')).unwrap() + 1;
        let mut cells: Vec<String> = lines[data_start + 9]
            .split(',')
            .map(str::to_string)
            .collect();
        let t: f64 = cells[0].parse().unwrap();
        cells[0] = format!("{}", t + 0.002);
        lines[data_start + 9] = cells.join(",");
        let err = ingest_recording_str(&lines.join("\n"), &IngestSchema::default()).unwrap_err();
        assert!(matches!(err, CoreError::Ingest { row: 10, .. }), "{err}");
    }

    #[test]
    fn ingest_rejects_missing_column() {
        let rec = noisy_recording();
        let text = write_recording_csv(&rec).unwrap();
        let schema = IngestSchema {
            sway_column: "body_sway_deg".into(),
            ..IngestSchema::default()
        };
        let err = ingest_recording_str(&text, &schema).unwrap_err();
        match err {
            CoreError::Ingest {
                row: 0,
                ref message,
            } => {
                assert!(message.contains("body_sway_deg"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ingest_rejects_unsupported_version() {
        let text = "# swaybench-recording v99\ntime_s,support_tilt_deg,measured_tilt_deg,com_sway_deg\n0,0,0,0\n0.01,0,0,0\n";
        let err = ingest_recording_str(text, &IngestSchema::default()).unwrap_err();
        assert!(matches!(err, CoreError::Ingest { row: 0, .. }), "{err}");
    }

    fn foreign_csv(n_periods: usize, warmup: usize, spp: usize, rate: f64) -> String {
        let n = (n_periods + warmup) * spp;
        let mut out = String::from("t,platform,sensor,body\n");
        for k in 0..n {
            let t = k as f64 / rate;
            let phase = 2.0 * std::f64::consts::PI * (k % spp) as f64 / spp as f64;
            let _ = writeln!(
                out,
                "{t},{},{},{}",
                phase.sin(),
                0.9 * phase.sin(),
                0.8 * phase.sin()
            );
        }
        out
    }

    #[test]
    fn ingest_foreign_format_with_schema_overrides() {
        let text = foreign_csv(2, 0, 50, 100.0);
        let schema = IngestSchema {
            time_column: "t".into(),
            stimulus_column: "platform".into(),
            measured_tilt_column: "sensor".into(),
            sway_column: "body".into(),
            n_periods: Some(2),
            samples_per_period: Some(50),
            sample_rate_hz: Some(100.0),
            ..IngestSchema::default()
        };
        let rec = ingest_recording_str(&text, &schema).unwrap();
        assert_eq!(rec.n_samples(), 100);
        assert_eq!(rec.meta.source, RecordingSource::Ingested);
        assert!(rec.joint_angles_deg.is_empty());
        assert_eq!(rec.meta.seed, None);
    }

    #[test]
    fn ingest_trims_declared_warmup() {
        let mut text = String::from("# swaybench-recording v1\n# n_periods=2\n# samples_per_period=50\n# warmup_periods=1\n# sample_rate_hz=100\n");
        text.push_str(&foreign_csv(2, 1, 50, 100.0).replace(
            "t,platform,sensor,body",
            "time_s,support_tilt_deg,measured_tilt_deg,com_sway_deg",
        ));
        let rec = ingest_recording_str(&text, &IngestSchema::default()).unwrap();
        assert_eq!(rec.n_samples(), 100);
        assert!((rec.stimulus_deg.t0 - 0.5).abs() < 1e-12);
        assert_eq!(rec.meta.warmup_periods, 1);
    }

    #[test]
    fn ingest_rejects_row_count_mismatch() {
        let text = foreign_csv(2, 0, 50, 100.0);
        let schema = IngestSchema {
            time_column: "t".into(),
            stimulus_column: "platform".into(),
            measured_tilt_column: "sensor".into(),
            sway_column: "body".into(),
            n_periods: Some(3),
            samples_per_period: Some(50),
            sample_rate_hz: Some(100.0),
            ..IngestSchema::default()
        };
        let err = ingest_recording_str(&text, &schema).unwrap_err();
        assert!(matches!(err, CoreError::Ingest { row: 0, .. }), "{err}");
    }

    #[test]
    fn ingest_requires_period_structure() {
        let text = foreign_csv(2, 0, 50, 100.0);
        let schema = IngestSchema {
            time_column: "t".into(),
            stimulus_column: "platform".into(),
            measured_tilt_column: "sensor".into(),
            sway_column: "body".into(),
            sample_rate_hz: Some(100.0),
            ..IngestSchema::default()
        };
        let err = ingest_recording_str(&text, &schema).unwrap_err();
        match err {
            CoreError::Ingest {
                row: 0,
                ref message,
            } => {
                assert!(message.contains("n_periods"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn recording_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        let rec = noisy_recording();
        save_recording(&rec, &path).unwrap();
        let back = ingest_recording(&path, &IngestSchema::default()).unwrap();
        assert_eq!(back.com_sway_deg.values, rec.com_sway_deg.values);
    }

    #[test]
    fn reference_json_roundtrip_is_bitwise() {
        let reference = synthetic_reference(&BandPlan::default_plan());
        let json = reference_to_json(&reference).unwrap();
        let back = reference_from_json(&json).unwrap();
        assert_eq!(back, reference);
        assert_eq!(reference_to_json(&back).unwrap(), json);
    }

    #[test]
    fn reference_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reference.json");
        let reference = synthetic_reference(&BandPlan::default_plan());
        save_reference(&reference, &path).unwrap();
        assert_eq!(load_reference(&path).unwrap(), reference);
    }

    #[test]
    fn reference_rejects_unsupported_version() {
        let reference = synthetic_reference(&BandPlan::default_plan());
        let json = reference_to_json(&reference)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        let err = reference_from_json(&json).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn reference_rejects_tampered_normalized_weights() {
        let reference = synthetic_reference(&BandPlan::default_plan());
        let json = reference_to_json(&reference).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["weights_normalized"][0] = serde_json::json!(0.123456);
        let err = reference_from_json(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("normalized weights"), "{err}");
    }

    #[test]
    fn report_json_roundtrip() {
        let config = TrialConfig::default();
        let rec = passthrough_recording(&config).unwrap();
        let plan = plan_for_recording(&rec).unwrap();
        let reference = synthetic_reference(&plan);
        let report = analyze(&rec, &reference, &AnalyzeOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report(&report, &path).unwrap();
        let back = load_report(&path).unwrap();
        assert_eq!(back, report);
        assert_eq!(
            report_to_json(&back).unwrap(),
            report_to_json(&report).unwrap()
        );
    }
}
