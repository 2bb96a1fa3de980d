//! Pseudorandom ternary tilt stimulus.
//!
//! The support-surface tilt profile is built from a maximum-length ternary
//! sequence: a shift register over GF(3) driven by a primitive feedback
//! polynomial cycles through all 3^m - 1 non-zero states, and each state
//! emits one of three velocity commands {-v, 0, +v}. Integrating the
//! velocity staircase gives a pseudorandom tilt-angle profile whose
//! spectrum carries power only at odd harmonics of the repetition rate,
//! which is what makes the later per-band frequency response estimates
//! well conditioned.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::signal::{SampledSignal, Unit};

/// Upper edge of the analysis band in Hz. Odd harmonics strictly below
/// this limit count as analysis peaks; the rest of the comb carries too
/// little power to estimate responses reliably.
pub const PEAK_BAND_LIMIT_HZ: f64 = 2.5;

/// Feedback taps for maximal-period shift registers over GF(3), degree 2..=7.
/// Row `m - 2` holds c such that s[n] = sumax c[i] * s[n-1-i] (mod 3); every
/// row was checked to cycle through all 3^m - 1 non-zero states (see tests).
const GF3_MAX_LENGTH_TAPS: [&[u8]; 6] = [
    &[1, 1],
    &[0, 1, 2],
    &[0, 0, 1, 1],
    &[0, 0, 0, 1, 2],
    &[0, 0, 0, 0, 1, 1],
    &[0, 0, 0, 0, 1, 0, 2],
];

/// Configuration of the ternary tilt stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrtsConfig {
    /// Shift-register length m; the sequence repeats after 3^m - 1 states.
    pub register_length: u32,
    /// Duration of one register state in seconds.
    pub state_duration: f64,
    /// Magnitude of the non-zero velocity commands, deg/s. Zero yields a
    /// constant-zero profile.
    pub velocity_amplitude: f64,
    /// Target max(signal) - min(signal) of the tilt profile, degrees.
    pub peak_to_peak: f64,
    /// Output sample rate, Hz.
    pub sample_rate: f64,
    /// Number of sequence repetitions in the generated signal.
    pub n_periods: usize,
}

impl Default for PrtsConfig {
    /// Benchmark protocol: 242-state sequence spread over a 20 s period,
    /// giving a 0.05 Hz fundamental and analysis peaks every 0.1 Hz up to
    /// 2.45 Hz, sampled at 100 Hz with a 1 degree peak-to-peak excursion.
    fn default() -> Self {
        PrtsConfig {
            register_length: 5,
            state_duration: 20.0 / 242.0,
            velocity_amplitude: 1.0,
            peak_to_peak: 1.0,
            sample_rate: 100.0,
            n_periods: 2,
        }
    }
}

impl PrtsConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.register_length as usize;
        if !(2..=7).contains(&m) {
            return Err(CoreError::Config(format!(
                "register_length must be in 2..=7, got {m}"
            )));
        }
        if self.state_duration <= 0.0 || !self.state_duration.is_finite() {
            return Err(CoreError::Config(format!(
                "state_duration must be positive, got {}",
                self.state_duration
            )));
        }
        if self.sample_rate <= 0.0 || !self.sample_rate.is_finite() {
            return Err(CoreError::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.velocity_amplitude < 0.0 || !self.velocity_amplitude.is_finite() {
            return Err(CoreError::Config(format!(
                "velocity_amplitude must be non-negative, got {}",
                self.velocity_amplitude
            )));
        }
        if self.peak_to_peak < 0.0 || !self.peak_to_peak.is_finite() {
            return Err(CoreError::Config(format!(
                "peak_to_peak must be non-negative, got {}",
                self.peak_to_peak
            )));
        }
        if self.n_periods == 0 {
            return Err(CoreError::Config("n_periods must be at least 1".into()));
        }
        if self.samples_per_period() < 2 {
            return Err(CoreError::Config(
                "sample_rate too low: fewer than 2 samples per period".into(),
            ));
        }
        Ok(())
    }

    /// Number of register states in one period, 3^m - 1.
    pub fn n_states(&self) -> usize {
        3usize.pow(self.register_length) - 1
    }

    /// Nominal repetition period in seconds.
    pub fn nominal_period_s(&self) -> f64 {
        self.n_states() as f64 * self.state_duration
    }

    /// State duration actually realized on the sample grid. Equal to
    /// `state_duration` when a whole period spans an integer number of
    /// samples; otherwise each state is stretched to the nearest whole
    /// number of samples so the generated signal stays exactly periodic.
    pub fn realized_state_duration_s(&self) -> f64 {
        let exact = self.nominal_period_s() * self.sample_rate;
        if (exact - exact.round()).abs() < 1e-9 {
            self.state_duration
        } else {
            let per_state = (self.state_duration * self.sample_rate).round().max(1.0);
            per_state / self.sample_rate
        }
    }

    /// Repetition period realized on the sample grid, seconds.
    pub fn realized_period_s(&self) -> f64 {
        self.samples_per_period() as f64 / self.sample_rate
    }

    /// Samples in one realized period.
    pub fn samples_per_period(&self) -> usize {
        let exact = self.nominal_period_s() * self.sample_rate;
        if (exact - exact.round()).abs() < 1e-9 {
            exact.round() as usize
        } else {
            let per_state = (self.state_duration * self.sample_rate).round().max(1.0);
            (per_state * self.n_states() as f64).round() as usize
        }
    }
}

/// Shift register over GF(3) with a maximal-period feedback polynomial.
struct TernaryRegister {
    taps: &'static [u8],
    state: Vec<u8>,
}

impl TernaryRegister {
    fn new(register_length: u32) -> Result<Self> {
        let m = register_length as usize;
        if !(2..=7).contains(&m) {
            return Err(CoreError::Config(format!(
                "register_length must be in 2..=7, got {m}"
            )));
        }
        let mut state = vec![0u8; m];
        state[m - 1] = 1;
        Ok(TernaryRegister {
            taps: GF3_MAX_LENGTH_TAPS[m - 2],
            state,
        })
    }

    /// Advances one step and returns the new symbol in {0, 1, 2}.
    fn step(&mut self) -> u8 {
        let next = self
            .taps
            .iter()
            .zip(&self.state)
            .map(|(&c, &s)| c * s)
            .sum::<u8>()
            % 3;
        self.state.rotate_right(1);
        self.state[0] = next;
        next
    }
}

/// One period of the ternary velocity sequence in deg/s: symbols
/// {0, 1, 2} mapped to {0, +v, -v}.
pub fn state_velocities(config: &PrtsConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut reg = TernaryRegister::new(config.register_length)?;
    let v = config.velocity_amplitude;
    Ok((0..config.n_states())
        .map(|_| match reg.step() {
            0 => 0.0,
            1 => v,
            _ => -v,
        })
        .collect())
}

/// Generates the tilt-angle stimulus in degrees.
///
/// The ternary velocity staircase is integrated into a piecewise-linear
/// tilt profile, sampled at `sample_rate`, shifted to zero mean, and
/// rescaled so that max - min equals `peak_to_peak`. The result repeats
/// bit-exactly every `samples_per_period()` samples.
pub fn generate_prts(config: &PrtsConfig) -> Result<SampledSignal> {
    config.validate()?;
    let velocities = state_velocities(config)?;
    let n_states = velocities.len();
    let state_dur = config.realized_state_duration_s();
    let n_per = config.samples_per_period();
    let n_total = n_per * config.n_periods;

    // Tilt at the start of each state; the final entry closes the loop and
    // returns to zero because the three symbols are balanced over a period.
    let mut start_angle = Vec::with_capacity(n_states + 1);
    let mut acc = 0.0;
    for &v in &velocities {
        start_angle.push(acc);
        acc += v * state_dur;
    }
    start_angle.push(acc);

    // One period of samples; later periods are bit-exact copies.
    let dt = 1.0 / config.sample_rate;
    let mut period: Vec<f64> = (0..n_per)
        .map(|i| {
            let t = i as f64 * dt;
            let k = ((t / state_dur) as usize).min(n_states - 1);
            start_angle[k] + velocities[k] * (t - k as f64 * state_dur)
        })
        .collect();

    let mean = period.iter().sum::<f64>() / n_per as f64;
    for p in period.iter_mut() {
        *p -= mean;
    }
    let max = period.iter().cloned().fold(f64::MIN, f64::max);
    let min = period.iter().cloned().fold(f64::MAX, f64::min);
    if max > min {
        let scale = config.peak_to_peak / (max - min);
        for p in period.iter_mut() {
            *p *= scale;
        }
    }

    let mut values = Vec::with_capacity(n_total);
    for _ in 0..config.n_periods {
        values.extend_from_slice(&period);
    }
    SampledSignal::new(values, config.sample_rate, Unit::Degrees, 0.0)
}

/// Analysis peak frequencies in Hz: odd harmonics of the realized
/// repetition rate, strictly below [`PEAK_BAND_LIMIT_HZ`] and at most
/// the Nyquist frequency.
pub fn peak_frequencies(config: &PrtsConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let f0 = 1.0 / config.realized_period_s();
    let nyquist = config.sample_rate / 2.0;
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
    Ok(freqs)
}
