//! Peak spectra and band-averaged frequency response estimation.
//!
//! Analysis works on the discrete peaks excited by the ternary stimulus.
//! Per-period DFT values at the peak frequencies are averaged across
//! stimulus repetitions, cross- and input power spectra are averaged
//! within frequency bands, and the band-wise frequency response is their
//! ratio:
//!
//! ```text
//! H_k = sum over band k of conj(U_i) * Y_i  /  sum over band k of |U_i|^2
//! ```
//!
//! Band averaging trades frequency resolution for variance reduction; the
//! band plan keeps roughly log-spaced centers so that each decade of the
//! response is resolved comparably.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::signal::SampledSignal;
use crate::stimulus::{peak_frequencies, PrtsConfig};

/// Input-power magnitudes below this are treated as no excitation.
pub const DEGENERATE_EXCITATION_FLOOR: f64 = 1e-15;

/// Relative tolerance for matching a peak frequency to a DFT bin.
const DFT_GRID_TOL: f64 = 1e-6;

/// Grouping of analysis peaks into frequency bands.
///
/// `bands[k]` lists indices into `f_peak`, sorted ascending. Adjacent
/// bands share their boundary peak: a peak on the transition between two
/// bands belongs to both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPlan {
    /// Analysis peak frequencies in Hz, ascending.
    pub f_peak: Vec<f64>,
    /// Per-band peak index sets.
    pub bands: Vec<Vec<usize>>,
}

/// Band sizes of the canonical 25-peak plan. Low bands stay narrow to
/// preserve resolution where the response changes fastest; high bands
/// widen so each band keeps comparable total input power.
const CANONICAL_BAND_SIZES: [usize; 11] = [2, 2, 2, 2, 3, 3, 3, 4, 4, 5, 5];

impl BandPlan {
    /// Builds the band plan for a stimulus configuration.
    pub fn for_config(config: &PrtsConfig) -> Result<BandPlan> {
        Self::for_peaks(peak_frequencies(config)?)
    }

    /// Builds a band plan over the given ascending peak frequencies.
    ///
    /// A 25-peak grid gets the canonical 11-band layout; other grid sizes
    /// get bands that grow geometrically, always overlapping by exactly
    /// one peak at each boundary.
    pub fn for_peaks(f_peak: Vec<f64>) -> Result<BandPlan> {
        if f_peak.len() < 2 {
            return Err(CoreError::Config(format!(
                "band plan needs at least 2 peaks, got {}",
                f_peak.len()
            )));
        }
        let sizes = if f_peak.len() == 25 {
            CANONICAL_BAND_SIZES.to_vec()
        } else {
            derived_band_sizes(f_peak.len())
        };
        let mut bands = Vec::with_capacity(sizes.len());
        let mut start = 0usize;
        for &size in &sizes {
            bands.push((start..start + size).collect());
            start += size - 1;
        }
        let plan = BandPlan { f_peak, bands };
        plan.validate()?;
        Ok(plan)
    }

    /// The canonical plan used by the benchmark protocol: 25 peaks from
    /// 0.05 Hz to 2.45 Hz grouped into 11 bands.
    pub fn default_plan() -> BandPlan {
        BandPlan::for_config(&PrtsConfig::default())
            .expect("default stimulus always yields a valid plan")
    }

    pub fn n_peaks(&self) -> usize {
        self.f_peak.len()
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    /// Band center frequencies: the arithmetic mean of each band's peaks.
    pub fn f_x(&self) -> Vec<f64> {
        self.bands
            .iter()
            .map(|band| band.iter().map(|&i| self.f_peak[i]).sum::<f64>() / band.len() as f64)
            .collect()
    }

    /// Number of peaks per band.
    pub fn band_sizes(&self) -> Vec<usize> {
        self.bands.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_peak.iter().any(|&f| f <= 0.0 || !f.is_finite()) {
            return Err(CoreError::Config(
                "peak frequencies must be positive and finite".into(),
            ));
        }
        if self.f_peak.windows(2).any(|p| p[1] <= p[0]) {
            return Err(CoreError::Config(
                "peak frequencies must be strictly ascending".into(),
            ));
        }
        if self.bands.is_empty() {
            return Err(CoreError::Config("band plan has no bands".into()));
        }
        let mut covered = vec![false; self.f_peak.len()];
        for (k, band) in self.bands.iter().enumerate() {
            if band.is_empty() {
                return Err(CoreError::Config(format!("band {k} is empty")));
            }
            if band.windows(2).any(|p| p[1] <= p[0]) {
                return Err(CoreError::Config(format!(
                    "band {k} indices must be strictly ascending"
                )));
            }
            for &i in band {
                if i >= self.f_peak.len() {
                    return Err(CoreError::Config(format!(
                        "band {k} references peak {i}, but there are only {} peaks",
                        self.f_peak.len()
                    )));
                }
                covered[i] = true;
            }
        }
        if let Some(i) = covered.iter().position(|&c| !c) {
            return Err(CoreError::Config(format!(
                "peak {i} ({} Hz) belongs to no band",
                self.f_peak[i]
            )));
        }
        Ok(())
    }
}

/// Geometric band layout for non-canonical grid sizes: boundary indices
/// follow a fixed growth ratio, clamped so every band has at least two
/// peaks of its own span and boundaries stay strictly increasing.
fn derived_band_sizes(n_peaks: usize) -> Vec<usize> {
    let n_bands = 11.min(n_peaks - 1).max(1);
    let ratio: f64 = 1.4;
    let denom = ratio.powi(n_bands as i32) - 1.0;
    let mut edges = vec![0usize];
    for k in 1..=n_bands {
        let target = ((n_peaks - 1) as f64 * (ratio.powi(k as i32) - 1.0) / denom).round() as usize;
        let prev = *edges.last().unwrap();
        edges.push(target.clamp(prev + 1, n_peaks - 1 - (n_bands - k)));
    }
    *edges.last_mut().unwrap() = n_peaks - 1;
    edges.windows(2).map(|e| e[1] - e[0] + 1).collect()
}

/// Complex band averages over a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum {
    pub plan: BandPlan,
    /// One complex mean per band.
    pub values: Vec<Complex64>,
}

/// Band-averaged frequency response estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frf {
    pub plan: BandPlan,
    /// One complex response per band, aligned with `plan.f_x()`.
    pub h: Vec<Complex64>,
}

/// Per-band spectral weights derived from the input excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub plan: BandPlan,
    /// Raw weights: root of the total input power in each band.
    pub w: Vec<f64>,
}

impl WeightVector {
    /// Weights scaled so the largest equals 1.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.w.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            self.w.iter().map(|w| w / max).collect()
        } else {
            self.w.clone()
        }
    }
}

/// Arithmetic mean of the peak values within each band of the plan.
pub fn band_average(peak_values: &[Complex64], plan: &BandPlan) -> Result<BandSpectrum> {
    plan.validate()?;
    if peak_values.len() != plan.n_peaks() {
        return Err(CoreError::Dimension(format!(
            "expected {} peak values, got {}",
            plan.n_peaks(),
            peak_values.len()
        )));
    }
    let values = plan
        .bands
        .iter()
        .map(|band| band.iter().map(|&i| peak_values[i]).sum::<Complex64>() / band.len() as f64)
        .collect();
    Ok(BandSpectrum {
        plan: plan.clone(),
        values,
    })
}

/// Complex spectrum of `signal` at the plan's peak frequencies.
///
/// The signal is split into `n_periods` equal chunks, the mean of the
/// whole signal is removed, each chunk is transformed, and the DFT values
/// at the peak bins are averaged across chunks. DFT values use the 1/N
/// normalization, so a unit-amplitude cosine at a peak yields 0.5.
pub fn extract_peaks(
    signal: &SampledSignal,
    plan: &BandPlan,
    n_periods: usize,
) -> Result<Vec<Complex64>> {
    plan.validate()?;
    if n_periods == 0 {
        return Err(CoreError::Config("n_periods must be at least 1".into()));
    }
    if signal.is_empty() || !signal.len().is_multiple_of(n_periods) {
        return Err(CoreError::Alignment(format!(
            "signal length {} is not a multiple of {n_periods} periods",
            signal.len()
        )));
    }
    let period_len = signal.len() / n_periods;
    if period_len < 2 {
        return Err(CoreError::Alignment(
            "periods must span at least 2 samples".into(),
        ));
    }

    // Map each peak frequency to its DFT bin for one period.
    let period_s = period_len as f64 / signal.sample_rate;
    let mut bins = Vec::with_capacity(plan.n_peaks());
    for &f in &plan.f_peak {
        let exact = f * period_s;
        let bin = exact.round();
        if (exact - bin).abs() > DFT_GRID_TOL * exact.max(1.0) {
            return Err(CoreError::Alignment(format!(
                "peak {f} Hz falls between DFT bins (bin index {exact})"
            )));
        }
        let bin = bin as usize;
        if bin == 0 || bin > period_len / 2 {
            return Err(CoreError::Alignment(format!(
                "peak {f} Hz is outside the resolvable range of a {period_s} s period"
            )));
        }
        bins.push(bin);
    }

    let mean = signal.mean();
    let fft = FftPlanner::new().plan_fft_forward(period_len);
    let mut acc = vec![Complex64::new(0.0, 0.0); plan.n_peaks()];
    let mut buf = vec![Complex64::new(0.0, 0.0); period_len];
    for p in 0..n_periods {
        for (b, &v) in buf
            .iter_mut()
            .zip(&signal.values[p * period_len..(p + 1) * period_len])
        {
            *b = Complex64::new(v - mean, 0.0);
        }
        fft.process(&mut buf);
        for (a, &bin) in acc.iter_mut().zip(&bins) {
            *a += buf[bin] / period_len as f64;
        }
    }
    Ok(acc.into_iter().map(|a| a / n_periods as f64).collect())
}

/// Band-averaged frequency response from input and output peak spectra.
///
/// Cross spectrum conj(U)*Y and input power |U|^2 are band-averaged
/// separately and divided, which makes the estimate invariant to any
/// common complex scaling of both inputs.
pub fn estimate_frf(u_peaks: &[Complex64], y_peaks: &[Complex64], plan: &BandPlan) -> Result<Frf> {
    if u_peaks.len() != y_peaks.len() {
        return Err(CoreError::Dimension(format!(
            "input has {} peaks, output has {}",
            u_peaks.len(),
            y_peaks.len()
        )));
    }
    let cross: Vec<Complex64> = u_peaks
        .iter()
        .zip(y_peaks)
        .map(|(u, y)| u.conj() * y)
        .collect();
    let power: Vec<Complex64> = u_peaks
        .iter()
        .map(|u| Complex64::new(u.norm_sqr(), 0.0))
        .collect();
    let g_uy = band_average(&cross, plan)?;
    let g_u = band_average(&power, plan)?;

    let f_x = plan.f_x();
    let mut h = Vec::with_capacity(plan.n_bands());
    for (k, (num, den)) in g_uy.values.iter().zip(&g_u.values).enumerate() {
        if den.norm() < DEGENERATE_EXCITATION_FLOOR {
            return Err(CoreError::DegenerateExcitation {
                band: k,
                f_x_hz: f_x[k],
                magnitude: den.norm(),
            });
        }
        h.push(num / den);
    }
    Ok(Frf {
        plan: plan.clone(),
        h,
    })
}

/// Spectral weights from the input excitation: the root of each band's
/// total peak power, so w_k = sqrt(sum over band k of |U_i|^2).
pub fn weights_from_input(u_peaks: &[Complex64], plan: &BandPlan) -> Result<WeightVector> {
    plan.validate()?;
    if u_peaks.len() != plan.n_peaks() {
        return Err(CoreError::Dimension(format!(
            "expected {} peak values, got {}",
            plan.n_peaks(),
            u_peaks.len()
        )));
    }
    let w = plan
        .bands
        .iter()
        .map(|band| {
            band.iter()
                .map(|&i| u_peaks[i].norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(WeightVector {
        plan: plan.clone(),
        w,
    })
}
