//! Command-line front end for the balance benchmarking toolkit.
//!
//! The verbs mirror the measurement chain: generate a support-tilt
//! stimulus, run or ingest a trial, build reference statistics from a
//! surrogate population, analyze a recording against a reference, and
//! re-score or summarize existing reports.
//!
//! Exit codes: 0 on success, 2 for validation errors (bad configuration
//! or malformed input files), 3 when a simulated trial ends in a fall,
//! 4 when analysis fails on structurally valid data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use swaybench_core::{
    analyze, generate_prts, ingest_recording, load_reference, load_report, peak_frequencies,
    run_trial, save_recording, save_reference, save_report, score_with, surrogate_reference,
    AnalyzeOptions, BenchmarkReport, BootstrapConfig, ControlledVariable, ControllerPreset,
    CoreError, DecParams, IngestSchema, ReferenceStats, Result, SurrogateConfig, TrialConfig,
    TrialRecording,
};

#[derive(Parser)]
#[command(
    name = "swaybench",
    version,
    about = "Support-tilt posturography: simulate or ingest trials and score sway responses against reference statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a pseudorandom ternary support-tilt profile as CSV
    GenerateStimulus(GenerateStimulusArgs),
    /// Simulate one closed-loop trial and record it
    RunTrial(RunTrialArgs),
    /// Normalize an external trial CSV into the native recording format
    Ingest(IngestArgs),
    /// Build reference statistics from a surrogate subject population
    MakeReference(MakeReferenceArgs),
    /// Score a recording against reference statistics
    Analyze(AnalyzeArgs),
    /// Re-score an existing report against other reference statistics
    Score(ScoreArgs),
    /// Summarize a report and emit plot-ready data files
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateStimulusArgs {
    /// Trial configuration JSON; only the stimulus section is used
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for stimulus.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunTrialArgs {
    /// Trial configuration JSON; omitted fields keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controller preset replacing the configured gains:
    /// standard, no-d, double-d, g-1.0, g-0.8
    #[arg(long)]
    preset: Option<String>,
    /// Sensor noise seed, overriding the configured one
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for recording.csv and manifest.json
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Source CSV file
    #[arg(long)]
    input: PathBuf,
    /// Column mapping and metadata fallbacks JSON for foreign formats
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Directory for the normalized recording.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MakeReferenceArgs {
    /// Surrogate population configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controller preset for the base trial the population is jittered from
    #[arg(long)]
    preset: Option<String>,
    /// Master seed, overriding the configured one
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for reference.json
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Recording CSV to analyze
    #[arg(long)]
    input: PathBuf,
    /// Reference statistics JSON to score against
    #[arg(long)]
    reference: PathBuf,
    /// Column mapping JSON for recordings in foreign formats
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Bootstrap resamples for the CDF confidence interval
    #[arg(long)]
    resamples: Option<usize>,
    /// Skip the mechanical work estimate
    #[arg(long)]
    no_energy: bool,
    /// Directory for report.json and the plot data files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Existing report JSON whose frequency response is re-scored
    #[arg(long)]
    input: PathBuf,
    /// Reference statistics JSON to score against
    #[arg(long)]
    reference: PathBuf,
    /// Bootstrap resamples for the CDF confidence interval
    #[arg(long)]
    resamples: Option<usize>,
    /// Directory for the updated report.json; omit to only print
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON to summarize
    #[arg(long)]
    input: PathBuf,
    /// Reference statistics JSON; adds the reference score CDF to the
    /// plot data
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Directory for the plot data files; omit to only print
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &CoreError) -> u8 {
    if err.is_validation() {
        2
    } else if err.is_fall() {
        3
    } else {
        4
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateStimulus(args) => generate_stimulus_cmd(args),
        Command::RunTrial(args) => run_trial_cmd(args),
        Command::Ingest(args) => ingest_cmd(args),
        Command::MakeReference(args) => make_reference_cmd(args),
        Command::Analyze(args) => analyze_cmd(args),
        Command::Score(args) => score_cmd(args),
        Command::Report(args) => report_cmd(args),
    }
}

fn annotate_io(path: &Path, e: std::io::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| annotate_io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| annotate_io(dir, e))
}

/// Replaces `controller` with the named preset's gains and returns the
/// canonical preset name.
fn apply_preset(controller: &mut DecParams, preset: Option<&str>) -> Result<Option<String>> {
    match preset {
        Some(name) => {
            let preset = ControllerPreset::from_name(name)?;
            *controller = preset.params();
            Ok(Some(preset.name().to_string()))
        }
        None => Ok(None),
    }
}

fn peak_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn generate_stimulus_cmd(args: GenerateStimulusArgs) -> Result<()> {
    let config: TrialConfig = load_or_default(args.config.as_ref())?;
    let stimulus = generate_prts(&config.stimulus)?;
    let peaks = peak_frequencies(&config.stimulus)?;

    ensure_dir(&args.out_dir)?;
    let path = args.out_dir.join("stimulus.csv");
    let mut out = String::new();
    let _ = writeln!(out, "# swaybench-stimulus v1");
    let _ = writeln!(out, "# sample_rate_hz={}", stimulus.sample_rate);
    let _ = writeln!(
        out,
        "# samples_per_period={}",
        config.stimulus.samples_per_period()
    );
    let _ = writeln!(out, "# n_periods={}", config.stimulus.n_periods);
    out.push_str("time_s,support_tilt_deg\n");
    for (k, value) in stimulus.values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", stimulus.time_at(k), value);
    }
    write_text(&path, &out)?;

    println!(
        "stimulus: {} periods of {:.3} s at {} Hz, {:.2} deg peak to peak",
        config.stimulus.n_periods,
        config.stimulus.realized_period_s(),
        config.stimulus.sample_rate,
        config.stimulus.peak_to_peak
    );
    println!(
        "  excited lines: {} odd harmonics, {:.3} to {:.3} Hz",
        peaks.len(),
        peaks.first().copied().unwrap_or(0.0),
        peaks.last().copied().unwrap_or(0.0)
    );
    println!("  wrote {}", path.display());
    Ok(())
}

fn run_trial_cmd(args: RunTrialArgs) -> Result<()> {
    let mut config: TrialConfig = load_or_default(args.config.as_ref())?;
    let preset = apply_preset(&mut config.controller, args.preset.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let mut manifest = run_manifest(&config, preset.as_deref())?;

    let mut recording = run_trial(&config)?;
    recording.meta.preset = preset.clone();

    ensure_dir(&args.out_dir)?;
    let recording_path = args.out_dir.join("recording.csv");
    save_recording(&recording, &recording_path)?;
    manifest["result"] = serde_json::json!({
        "completed": true,
        "n_samples": recording.n_samples(),
        "peak_com_sway_deg": peak_abs(&recording.com_sway_deg.values),
    });
    let manifest_path = args.out_dir.join("manifest.json");
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;

    print_trial_summary(&config, preset.as_deref(), &recording);
    println!("  wrote {}", recording_path.display());
    println!("  wrote {}", manifest_path.display());
    Ok(())
}

fn controlled_variable_names(params: &DecParams) -> Vec<&'static str> {
    params
        .controlled
        .iter()
        .map(|c| match c {
            ControlledVariable::ComSway => "com-sway",
            ControlledVariable::JointAngle => "joint-angle",
        })
        .collect()
}

/// Resolved configuration plus the quantities derived from it, written
/// alongside each recording so a run can be audited without re-running.
fn run_manifest(config: &TrialConfig, preset: Option<&str>) -> Result<serde_json::Value> {
    let peaks = peak_frequencies(&config.stimulus)?;
    let plant = &config.plant;
    let segments: Vec<serde_json::Value> = plant
        .segments
        .iter()
        .map(|s| {
            serde_json::json!({
                "mass_kg": s.mass_kg,
                "length_m": s.length_m,
                "com_m": s.com_m,
                "inertia_kg_m2": s.inertia_kg_m2,
            })
        })
        .collect();
    Ok(serde_json::json!({
        "schema_version": 1,
        "tool": "swaybench run-trial",
        "preset": preset,
        "seed": config.seed,
        "config_digest": config.digest(),
        "config": config,
        "derived": {
            "stimulus": {
                "period_s": config.stimulus.realized_period_s(),
                "samples_per_period": config.stimulus.samples_per_period(),
                "excited_frequencies_hz": peaks,
            },
            "plant": {
                "segments": segments,
                "total_mass_kg": plant.total_mass_kg(),
                "total_height_m": plant.segments.iter().map(|s| s.length_m).sum::<f64>(),
                "com_height_m": plant.com_height_m(),
                "gravity_levers_nm_per_rad": plant.gravity_levers_nm_per_rad(),
            },
            "controller": {
                "controlled_variables": controlled_variable_names(&config.controller),
                "delay_ticks": config.controller.delay_ticks(),
                "loop_gain": config.controller.loop_gain,
            },
            "integration": {
                "plant_dt_s": config.plant_dt_s,
                "substeps_per_tick": config.substeps()?,
            },
        },
    }))
}

fn fmt_f64_list(values: &[f64], decimals: usize) -> String {
    let body: Vec<String> = values
        .iter()
        .map(|v| format!("{v:.prec$}", prec = decimals))
        .collect();
    format!("[{}]", body.join(", "))
}

fn print_trial_summary(config: &TrialConfig, preset: Option<&str>, recording: &TrialRecording) {
    let plant = &config.plant;
    println!(
        "trial: {} controller, seed {}",
        preset.unwrap_or("configured"),
        config.seed
    );
    println!(
        "  stimulus: {:.2} deg pp, {} x {:.3} s periods + {} warm-up, {} Hz",
        config.stimulus.peak_to_peak,
        config.stimulus.n_periods,
        config.stimulus.realized_period_s(),
        config.warmup_periods,
        config.stimulus.sample_rate
    );
    println!(
        "  plant: {} segments, {:.2} kg, COM at {:.3} m, gravity levers {} N·m/rad",
        plant.segments.len(),
        plant.total_mass_kg(),
        plant.com_height_m(),
        fmt_f64_list(&plant.gravity_levers_nm_per_rad(), 1)
    );
    println!(
        "  controller: regulates {}, delay {} ticks, loop gain {}",
        controlled_variable_names(&config.controller).join("/"),
        config.controller.delay_ticks(),
        config.controller.loop_gain
    );
    println!(
        "  result: completed, peak |sway| {:.3} deg over {} samples",
        peak_abs(&recording.com_sway_deg.values),
        recording.n_samples()
    );
}

fn ingest_cmd(args: IngestArgs) -> Result<()> {
    let schema: IngestSchema = load_or_default(args.schema.as_ref())?;
    let recording = ingest_recording(&args.input, &schema)?;

    ensure_dir(&args.out_dir)?;
    let path = args.out_dir.join("recording.csv");
    save_recording(&recording, &path)?;

    println!("ingested {}", args.input.display());
    println!(
        "  {} samples at {} Hz, {} periods of {} samples",
        recording.n_samples(),
        recording.sample_rate_hz(),
        recording.meta.n_periods,
        recording.meta.samples_per_period
    );
    println!(
        "  {} joint angle and {} joint torque channels",
        recording.joint_angles_deg.len(),
        recording.joint_torques_nm.len()
    );
    println!("  wrote {}", path.display());
    Ok(())
}

fn make_reference_cmd(args: MakeReferenceArgs) -> Result<()> {
    let mut config: SurrogateConfig = load_or_default(args.config.as_ref())?;
    let preset = apply_preset(&mut config.base.controller, args.preset.as_deref())?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }

    let stats = surrogate_reference(&config)?;

    ensure_dir(&args.out_dir)?;
    let path = args.out_dir.join("reference.json");
    save_reference(&stats, &path)?;

    let mut sorted = stats.sample_scores.clone();
    sorted.sort_by(f64::total_cmp);
    println!(
        "reference: {} of {} surrogate subjects completed, master seed {}",
        stats.n_subjects, config.n_subjects, config.master_seed
    );
    if let Some(preset) = &preset {
        println!("  base controller: {preset} preset");
    }
    if !stats.provenance.failed_subjects.is_empty() {
        println!(
            "  fell and were dropped: subjects {:?}",
            stats.provenance.failed_subjects
        );
    }
    println!(
        "  sample scores: min {:.3}, median {:.3}, max {:.3}",
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1]
    );
    if stats.provenance.regularized {
        println!("  covariance needed ridge regularization");
    }
    println!("  wrote {}", path.display());
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let schema: IngestSchema = load_or_default(args.schema.as_ref())?;
    let recording = ingest_recording(&args.input, &schema)?;
    let reference = load_reference(&args.reference)?;
    let mut options = AnalyzeOptions::default();
    if let Some(n) = args.resamples {
        if n == 0 {
            return Err(CoreError::Config("--resamples must be at least 1".into()));
        }
        options.bootstrap.n_resamples = n;
    }
    if args.no_energy {
        options.energy = false;
    }

    let report = analyze(&recording, &reference, &options)?;

    ensure_dir(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    save_report(&report, &report_path)?;
    let frf_path = args.out_dir.join("frf.csv");
    write_text(&frf_path, &frf_csv(&report))?;
    let score_path = args.out_dir.join("score.csv");
    write_text(&score_path, &score_csv(&report))?;
    let cdf_path = args.out_dir.join("cdf_curve.csv");
    write_text(&cdf_path, &cdf_curve_csv(&reference))?;

    print_report(&report);
    for path in [&report_path, &frf_path, &score_path, &cdf_path] {
        println!("  wrote {}", path.display());
    }
    Ok(())
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let mut report = load_report(&args.input)?;
    let reference = load_reference(&args.reference)?;
    let mut bootstrap = BootstrapConfig::default();
    if let Some(n) = args.resamples {
        if n == 0 {
            return Err(CoreError::Config("--resamples must be at least 1".into()));
        }
        bootstrap.n_resamples = n;
    }

    let previous = report.score.clone();
    report.score = score_with(&report.frf, &reference, &bootstrap)?;
    report.reference_provenance = reference.provenance.clone();

    println!(
        "re-scored {} against {}",
        args.input.display(),
        args.reference.display()
    );
    println!(
        "  D = {:.4} (was {:.4})",
        report.score.score_d, previous.score_d
    );
    println!(
        "  CDF position {:.3} [{:.3}, {:.3}] over {} subjects (was {:.3})",
        report.score.cdf,
        report.score.cdf_ci.0,
        report.score.cdf_ci.1,
        report.score.n_reference,
        previous.cdf
    );
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        let path = dir.join("report.json");
        save_report(&report, &path)?;
        println!("  wrote {}", path.display());
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let report = load_report(&args.input)?;
    print_report(&report);

    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        let frf_path = dir.join("frf.csv");
        write_text(&frf_path, &frf_csv(&report))?;
        let score_path = dir.join("score.csv");
        write_text(&score_path, &score_csv(&report))?;
        println!("  wrote {}", frf_path.display());
        println!("  wrote {}", score_path.display());
        if let Some(reference_path) = &args.reference {
            let reference = load_reference(reference_path)?;
            let cdf_path = dir.join("cdf_curve.csv");
            write_text(&cdf_path, &cdf_curve_csv(&reference))?;
            println!("  wrote {}", cdf_path.display());
        }
    }
    Ok(())
}

fn print_report(report: &BenchmarkReport) {
    match &report.preset {
        Some(preset) => println!("report: {preset} controller"),
        None => println!("report:"),
    }
    println!("  alignment lag: {} samples", report.lag_samples);
    println!("  frequency response ({} bands):", report.band_f_x_hz.len());
    println!("    {:>8}  {:>9}  {:>10}", "f_hz", "magnitude", "phase_deg");
    for (f, h) in report.band_f_x_hz.iter().zip(&report.frf.h) {
        println!(
            "    {:8.3}  {:9.4}  {:10.2}",
            f,
            h.norm(),
            h.arg().to_degrees()
        );
    }
    let s = &report.score;
    println!(
        "  score: D = {:.4} (Mahalanobis {:.4}, {} weights)",
        s.score_d, s.mahalanobis, s.weights_used
    );
    println!(
        "  reference position: CDF {:.3} [{:.3}, {:.3}] over {} subjects, {} ties",
        s.cdf, s.cdf_ci.0, s.cdf_ci.1, s.n_reference, s.ties
    );
    if let Some(energy) = &report.energy {
        println!(
            "  mechanical work: {:.2} J total, per joint {}",
            energy.total_j,
            fmt_f64_list(&energy.per_joint_j, 2)
        );
    }
}

/// Band-averaged frequency response, one row per band.
fn frf_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("f_hz,real,imag,magnitude,phase_deg\n");
    for (f, h) in report.band_f_x_hz.iter().zip(&report.frf.h) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            f,
            h.re,
            h.im,
            h.norm(),
            h.arg().to_degrees()
        );
    }
    out
}

/// The probe score and its position within the reference sample.
fn score_csv(report: &BenchmarkReport) -> String {
    let s = &report.score;
    format!(
        "score_d,mahalanobis,cdf,cdf_ci_lo,cdf_ci_hi,ties,n_reference\n{},{},{},{},{},{},{}\n",
        s.score_d, s.mahalanobis, s.cdf, s.cdf_ci.0, s.cdf_ci.1, s.ties, s.n_reference
    )
}

/// Empirical CDF of the reference sample scores, one row per subject.
fn cdf_curve_csv(reference: &ReferenceStats) -> String {
    let mut sorted = reference.sample_scores.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out = String::from("score_d,cumulative_fraction\n");
    for (i, score) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{},{}", score, (i + 1) as f64 / n as f64);
    }
    out
}
