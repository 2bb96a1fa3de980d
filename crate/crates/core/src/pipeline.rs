//! Trial analysis: alignment to the commanded stimulus, frequency
//! response estimation, scoring against a reference population, energy
//! accounting, and generation of surrogate reference populations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::NoiseConfig;
use crate::scoring::{
    fit_reference, score_with, BootstrapConfig, Provenance, ReferenceStats, ScoreReport,
};
use crate::signal::SampledSignal;
use crate::sim::{digest_json, run_trial, TrialConfig, TrialRecording};
use crate::spectral::{estimate_frf, extract_peaks, weights_from_input, BandPlan, Frf};
use crate::stimulus::PEAK_BAND_LIMIT_HZ;

/// Alignment fails when the peak normalized cross-correlation between the
/// recorded and ideal profiles is below this floor; such a recording does
/// not plausibly contain the stimulus at all.
pub const ALIGNMENT_MIN_CORRELATION: f64 = 0.1;

/// Version stamped into analysis reports.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Lag in samples of the recorded signal behind the periodic ideal,
/// found by circular cross-correlation. Positive lag means
/// `recorded[k]` tracks `ideal[k - lag]`.
///
/// Both signals have their means removed. Lags from `-period_samples`
/// to `+period_samples` are searched; because the ideal is periodic, a
/// correlation maximum repeats one period apart and the tie is broken
/// toward the smallest |lag|. An exact tie between two lags of the same
/// magnitude is ambiguous and rejected.
pub fn align(
    recorded: &SampledSignal,
    ideal: &SampledSignal,
    period_samples: usize,
) -> Result<i64> {
    let rate_gap = (recorded.sample_rate - ideal.sample_rate).abs();
    if rate_gap > 1e-9 * ideal.sample_rate {
        return Err(CoreError::Dimension(format!(
            "recorded at {} Hz, ideal at {} Hz",
            recorded.sample_rate, ideal.sample_rate
        )));
    }
    if period_samples < 2 || ideal.len() < period_samples {
        return Err(CoreError::Alignment(format!(
            "ideal signal has {} samples, period is {period_samples}",
            ideal.len()
        )));
    }
    if recorded.len() < period_samples {
        return Err(CoreError::Alignment(format!(
            "recording has {} samples, shorter than one stimulus period ({period_samples})",
            recorded.len()
        )));
    }

    let ideal_mean = ideal.mean();
    let u: Vec<f64> = ideal.values[..period_samples]
        .iter()
        .map(|v| v - ideal_mean)
        .collect();
    let rec_mean = recorded.mean();
    let r: Vec<f64> = recorded.values.iter().map(|v| v - rec_mean).collect();

    let e_r: f64 = r.iter().map(|v| v * v).sum();
    if e_r <= 0.0 {
        return Err(CoreError::Alignment(
            "recorded signal has no variance".into(),
        ));
    }
    if u.iter().map(|v| v * v).sum::<f64>() <= 0.0 {
        return Err(CoreError::Alignment("stimulus has no power".into()));
    }

    let p = period_samples as i64;
    let mut best_rho = f64::NEG_INFINITY;
    let mut candidates: Vec<i64> = Vec::new();
    for lag in -p..=p {
        let mut c = 0.0;
        let mut e_u = 0.0;
        for (k, &rv) in r.iter().enumerate() {
            let idx = (k as i64 - lag).rem_euclid(p) as usize;
            c += rv * u[idx];
            e_u += u[idx] * u[idx];
        }
        if e_u <= 0.0 {
            continue;
        }
        let rho = c / (e_r * e_u).sqrt();
        if rho > best_rho {
            best_rho = rho;
            candidates.clear();
            candidates.push(lag);
        } else if rho == best_rho {
            candidates.push(lag);
        }
    }

    if best_rho < ALIGNMENT_MIN_CORRELATION {
        return Err(CoreError::Alignment(format!(
            "peak correlation {best_rho:.4} is below the {ALIGNMENT_MIN_CORRELATION} floor"
        )));
    }
    candidates.sort_by_key(|&l| (l.abs(), l));
    let lag = candidates[0];
    if candidates.iter().any(|&l| l != lag && l.abs() == lag.abs()) {
        return Err(CoreError::Alignment(format!(
            "ambiguous alignment: lags {} and {} correlate equally",
            lag, -lag
        )));
    }
    Ok(lag)
}

/// Undoes a lag by circular rotation: `out[k] = signal[(k + lag) mod n]`.
/// Exact for steady-state periodic recordings, which is what the
/// analysis operates on.
pub fn apply_lag(signal: &SampledSignal, lag: i64) -> SampledSignal {
    let n = signal.len() as i64;
    if n == 0 || lag.rem_euclid(n) == 0 {
        return signal.clone();
    }
    let values = (0..n)
        .map(|k| signal.values[(k + lag).rem_euclid(n) as usize])
        .collect();
    SampledSignal {
        values,
        sample_rate: signal.sample_rate,
        unit: signal.unit,
        t0: signal.t0,
    }
}

/// Band plan implied by a recording's period and sample rate: odd
/// harmonics of the repetition rate below the peak band limit.
pub fn plan_for_recording(recording: &TrialRecording) -> Result<BandPlan> {
    let rate = recording.sample_rate_hz();
    let period_s = recording.meta.samples_per_period as f64 / rate;
    let f0 = 1.0 / period_s;
    let nyquist = rate / 2.0;
    let mut freqs = Vec::new();
    let mut harmonic = 1u64;
    loop {
        let f = harmonic as f64 * f0;
        if f >= PEAK_BAND_LIMIT_HZ || f > nyquist {
            break;
        }
        freqs.push(f);
        harmonic += 2;
    }
    if freqs.is_empty() {
        return Err(CoreError::Config(format!(
            "no analysis peaks below {PEAK_BAND_LIMIT_HZ} Hz: fundamental is {f0} Hz"
        )));
    }
    BandPlan::for_peaks(freqs)
}

/// Aligns a recording to its commanded stimulus and estimates the sway
/// frequency response. Returns the plan, the lag found, and the FRF.
pub fn recording_frf(recording: &TrialRecording) -> Result<(BandPlan, i64, Frf)> {
    recording.validate()?;
    let plan = plan_for_recording(recording)?;
    let lag = align(
        &recording.measured_tilt_deg,
        &recording.stimulus_deg,
        recording.meta.samples_per_period,
    )?;
    let sway = apply_lag(&recording.com_sway_deg, lag);
    let n_periods = recording.meta.n_periods;
    let u = extract_peaks(&recording.stimulus_deg, &plan, n_periods)?;
    let y = extract_peaks(&sway, &plan, n_periods)?;
    let frf = estimate_frf(&u, &y, &plan)?;
    Ok((plan, lag, frf))
}

/// Mechanical work magnitude for one joint, joules: rectified power
/// |τ·ω| integrated by the trapezoid rule. The angular velocity comes
/// from central differences of the joint angle, one-sided at the ends.
pub fn estimate_energy(torque_nm: &SampledSignal, angle_deg: &SampledSignal) -> Result<f64> {
    let n = torque_nm.len();
    if n != angle_deg.len() {
        return Err(CoreError::Dimension(format!(
            "torque has {n} samples, angle has {}",
            angle_deg.len()
        )));
    }
    if n < 2 {
        return Err(CoreError::Dimension(
            "energy estimation needs at least 2 samples".into(),
        ));
    }
    let rate_gap = (torque_nm.sample_rate - angle_deg.sample_rate).abs();
    if rate_gap > 1e-9 * angle_deg.sample_rate {
        return Err(CoreError::Dimension(format!(
            "torque at {} Hz, angle at {} Hz",
            torque_nm.sample_rate, angle_deg.sample_rate
        )));
    }

    let dt = angle_deg.dt();
    let to_rad = std::f64::consts::PI / 180.0;
    let a = &angle_deg.values;
    let omega = |k: usize| -> f64 {
        let d = if k == 0 {
            a[1] - a[0]
        } else if k == n - 1 {
            a[n - 1] - a[n - 2]
        } else {
            return (a[k + 1] - a[k - 1]) * to_rad / (2.0 * dt);
        };
        d * to_rad / dt
    };

    let power = |k: usize| (torque_nm.values[k] * omega(k)).abs();
    let mut acc = 0.0;
    for k in 0..n - 1 {
        acc += 0.5 * (power(k) + power(k + 1)) * dt;
    }
    Ok(acc)
}

/// Per-joint and total work magnitudes for a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Integrated |torque · velocity| per joint, ankle first, joules.
    pub per_joint_j: Vec<f64>,
    pub total_j: f64,
}

/// Knobs of the analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeOptions {
    pub bootstrap: BootstrapConfig,
    /// Skip the energy stage when false or when the recording carries no
    /// torque channels.
    pub energy: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            bootstrap: BootstrapConfig::default(),
            energy: true,
        }
    }
}

/// Complete analysis output for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    /// Samples the recording lagged behind the commanded stimulus.
    pub lag_samples: i64,
    /// Band center frequencies, Hz.
    pub band_f_x_hz: Vec<f64>,
    pub frf: Frf,
    pub score: ScoreReport,
    pub reference_provenance: Provenance,
    pub energy: Option<EnergyReport>,
}

/// Runs the full analysis: validation, alignment, peak spectra, FRF,
/// scoring, and the energy stage. Errors carry the stage they occurred
/// in.
pub fn analyze(
    recording: &TrialRecording,
    reference: &ReferenceStats,
    options: &AnalyzeOptions,
) -> Result<BenchmarkReport> {
    recording.validate().map_err(|e| e.in_stage("validate"))?;
    reference.validate().map_err(|e| e.in_stage("validate"))?;
    let plan = plan_for_recording(recording).map_err(|e| e.in_stage("validate"))?;
    if plan != reference.plan {
        return Err(CoreError::Dimension(format!(
            "recording implies {} peaks in {} bands, reference was fit on {} peaks in {} bands",
            plan.n_peaks(),
            plan.n_bands(),
            reference.plan.n_peaks(),
            reference.plan.n_bands()
        ))
        .in_stage("validate"));
    }

    let lag = align(
        &recording.measured_tilt_deg,
        &recording.stimulus_deg,
        recording.meta.samples_per_period,
    )
    .map_err(|e| e.in_stage("align"))?;
    let sway = apply_lag(&recording.com_sway_deg, lag);

    let n_periods = recording.meta.n_periods;
    let u = extract_peaks(&recording.stimulus_deg, &plan, n_periods)
        .map_err(|e| e.in_stage("spectra"))?;
    let y = extract_peaks(&sway, &plan, n_periods).map_err(|e| e.in_stage("spectra"))?;
    let frf = estimate_frf(&u, &y, &plan).map_err(|e| e.in_stage("frf"))?;

    let score = score_with(&frf, reference, &options.bootstrap).map_err(|e| e.in_stage("score"))?;

    let energy = if options.energy
        && !recording.joint_torques_nm.is_empty()
        && !recording.joint_angles_deg.is_empty()
    {
        let per_joint = recording
            .joint_torques_nm
            .iter()
            .zip(&recording.joint_angles_deg)
            .map(|(tau, angle)| estimate_energy(tau, angle))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.in_stage("energy"))?;
        let total = per_joint.iter().sum();
        Some(EnergyReport {
            per_joint_j: per_joint,
            total_j: total,
        })
    } else {
        None
    };

    Ok(BenchmarkReport {
        schema_version: REPORT_SCHEMA_VERSION,
        preset: recording.meta.preset.clone(),
        seed: recording.meta.seed,
        config_digest: recording.meta.config_digest.clone(),
        lag_samples: lag,
        band_f_x_hz: plan.f_x(),
        frf,
        score,
        reference_provenance: reference.provenance.clone(),
        energy,
    })
}

/// Sensor noise used for surrogate subjects: small Gaussian errors on
/// every internal channel except the contact torque.
pub fn default_sensor_noise() -> NoiseConfig {
    NoiseConfig {
        joint_angle_std_rad: 0.05f64.to_radians(),
        joint_velocity_std_rad_s: 0.1f64.to_radians(),
        vestibular_angle_std_rad: 0.1f64.to_radians(),
        vestibular_velocity_std_rad_s: 0.2f64.to_radians(),
        torque_std_nm: 0.0,
    }
}

/// Configuration of a simulated reference population.
///
/// Each subject is the base trial with controller gains, segment masses,
/// and the velocity threshold independently scaled by uniform relative
/// jitter, plus an independent sensor-noise stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n_subjects: usize,
    pub master_seed: u64,
    /// Template trial; per-subject variation is applied on top.
    pub base: TrialConfig,
    /// Relative half-width of the uniform scaling on every controller
    /// gain (kp and kd of each joint).
    pub gain_jitter: f64,
    /// Relative half-width of the uniform scaling on each segment mass.
    pub mass_jitter: f64,
    /// Relative half-width of the uniform scaling on the velocity
    /// threshold.
    pub threshold_jitter: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let base = TrialConfig {
            noise: default_sensor_noise(),
            ..TrialConfig::default()
        };
        SurrogateConfig {
            n_subjects: 38,
            master_seed: 7,
            base,
            gain_jitter: 0.10,
            mass_jitter: 0.05,
            threshold_jitter: 0.20,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(CoreError::Config(format!(
                "a reference population needs at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        for (name, v) in [
            ("gain_jitter", self.gain_jitter),
            ("mass_jitter", self.mass_jitter),
            ("threshold_jitter", self.threshold_jitter),
        ] {
            if !(0.0..=0.9).contains(&v) || !v.is_finite() {
                return Err(CoreError::Config(format!(
                    "{name} must be in [0, 0.9], got {v}"
                )));
            }
        }
        self.base.validate()
    }

    /// The trial configuration of one subject given its two seeds: one
    /// for the parameter jitter, one for the subject's sensor noise.
    pub fn subject_config(&self, jitter_seed: u64, trial_seed: u64) -> TrialConfig {
        let mut cfg = self.base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
        let scale =
            |frac: f64, rng: &mut ChaCha8Rng| -> f64 { 1.0 + frac * rng.gen_range(-1.0..=1.0) };
        for joint in &mut cfg.controller.joints {
            joint.kp *= scale(self.gain_jitter, &mut rng);
            joint.kd *= scale(self.gain_jitter, &mut rng);
        }
        cfg.controller.threshold_rad_s *= scale(self.threshold_jitter, &mut rng);
        for seg in &mut cfg.plant.segments {
            seg.mass_kg *= scale(self.mass_jitter, &mut rng);
        }
        cfg.seed = trial_seed;
        cfg
    }
}

/// Simulates a reference population and fits its statistics.
///
/// Subjects run in parallel; results are reduced in subject order, so
/// the same configuration always produces bit-identical statistics.
/// Subjects that fall are dropped and listed in the provenance; fewer
/// than 2 survivors is an error.
pub fn surrogate_reference(config: &SurrogateConfig) -> Result<ReferenceStats> {
    config.validate()?;
    let digest = digest_json(config);

    let mut master = ChaCha8Rng::seed_from_u64(config.master_seed);
    let seeds: Vec<(u64, u64)> = (0..config.n_subjects)
        .map(|_| (master.gen(), master.gen()))
        .collect();

    let results: Vec<Result<Frf>> = seeds
        .par_iter()
        .map(|&(jitter_seed, trial_seed)| {
            let cfg = config.subject_config(jitter_seed, trial_seed);
            let recording = run_trial(&cfg)?;
            recording_frf(&recording).map(|(_, _, frf)| frf)
        })
        .collect();

    let mut frfs = Vec::with_capacity(config.n_subjects);
    let mut failed = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(frf) => frfs.push(frf),
            Err(e) if e.is_fall() => failed.push(i),
            Err(e) => return Err(e),
        }
    }
    if frfs.len() < 2 {
        return Err(CoreError::Statistics(format!(
            "only {} of {} surrogate subjects completed their trial (fallen: {:?})",
            frfs.len(),
            config.n_subjects,
            failed
        )));
    }

    let plan = BandPlan::for_config(&config.base.stimulus)?;
    let stim = crate::stimulus::generate_prts(&config.base.stimulus)?;
    let u = extract_peaks(&stim, &plan, config.base.stimulus.n_periods)?;
    let weights = weights_from_input(&u, &plan)?;

    let mut stats = fit_reference(&frfs, &weights)?;
    stats.provenance = Provenance {
        source: "surrogate".into(),
        seed: Some(config.master_seed),
        regularized: stats.provenance.regularized,
        failed_subjects: failed,
        config_digest: Some(digest),
    };
    Ok(stats)
}

/// Reference response for analyses of data that merely passes the
/// stimulus through: both the measured tilt and the sway equal the
/// commanded profile, so the FRF is exactly one in every band.
pub fn passthrough_recording(config: &TrialConfig) -> Result<TrialRecording> {
    config.validate()?;
    let stim = crate::stimulus::generate_prts(&config.stimulus)?;
    let meta = crate::sim::TrialMeta {
        schema_version: crate::sim::RECORDING_SCHEMA_VERSION,
        source: crate::sim::RecordingSource::Simulated,
        seed: Some(config.seed),
        config_digest: Some(config.digest()),
        preset: None,
        n_periods: config.stimulus.n_periods,
        samples_per_period: config.stimulus.samples_per_period(),
        warmup_periods: 0,
    };
    Ok(TrialRecording {
        stimulus_deg: stim.clone(),
        measured_tilt_deg: stim.clone(),
        com_sway_deg: stim,
        joint_angles_deg: Vec::new(),
        joint_torques_nm: Vec::new(),
        meta,
    })
}
