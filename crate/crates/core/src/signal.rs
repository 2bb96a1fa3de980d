//! Uniformly sampled scalar signals with unit tags.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Physical unit of a sampled signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Degrees,
    DegreesPerSecond,
    Radians,
    RadiansPerSecond,
    NewtonMeters,
    Dimensionless,
}

/// A uniformly sampled scalar time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    /// Sample values, one per tick.
    pub values: Vec<f64>,
    /// Samples per second.
    pub sample_rate: f64,
    /// Unit of `values`.
    pub unit: Unit,
    /// Time of the first sample, seconds.
    pub t0: f64,
}

impl SampledSignal {
    /// Builds a signal, rejecting non-finite samples and non-positive rates.
    pub fn new(values: Vec<f64>, sample_rate: f64, unit: Unit, t0: f64) -> Result<Self> {
        if sample_rate <= 0.0 || !sample_rate.is_finite() {
            return Err(CoreError::Config(format!(
                "sample_rate must be positive and finite, got {sample_rate}"
            )));
        }
        if !t0.is_finite() {
            return Err(CoreError::Config(format!("t0 must be finite, got {t0}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Config(format!(
                "sample {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(SampledSignal {
            values,
            sample_rate,
            unit,
            t0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample spacing in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Total spanned duration in seconds (`len / rate`).
    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    /// Time of sample `i` in seconds.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    /// Arithmetic mean of the samples.
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
