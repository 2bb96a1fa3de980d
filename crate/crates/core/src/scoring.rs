//! Human-likeness scoring of frequency responses.
//!
//! A response is compared against reference statistics (mean, covariance,
//! spectral weights) collected from a reference population. The score is
//! a weighted Mahalanobis-style distance
//!
//! ```text
//! D = sqrt((S d)' Sigma^-1 (S d)),   d = expanded FRF - mu
//! ```
//!
//! where S is a diagonal matrix holding the normalized spectral weights,
//! repeated for the real and imaginary halves of the expansion. With all
//! weights equal to one, D reduces to the plain Mahalanobis distance. The
//! score's position within the reference score sample is reported as an
//! empirical CDF value with a bootstrap confidence interval.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::spectral::{Frf, WeightVector};

/// Ridge fraction applied to a near-singular covariance, relative to the
/// mean diagonal entry.
pub const RIDGE_EPSILON: f64 = 1e-6;

/// A covariance counts as near-singular when its smallest eigenvalue is
/// below this fraction of the largest.
pub const EIGENVALUE_RATIO_FLOOR: f64 = 1e-10;

/// Absolute ridge floor for the degenerate case of an all-zero covariance
/// (identical reference responses), which would otherwise stay singular.
pub const RIDGE_ABS_FLOOR: f64 = 1e-12;

/// Maximum accepted relative residual when solving against the covariance.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// How a reference set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// "surrogate" for simulated populations, "external" for imported data.
    pub source: String,
    /// Master seed for surrogate populations.
    pub seed: Option<u64>,
    /// True when a ridge was added to the covariance.
    pub regularized: bool,
    /// Subjects that fell during surrogate generation, by index.
    pub failed_subjects: Vec<usize>,
    /// Digest of the generating configuration, if any.
    pub config_digest: Option<String>,
}

impl Provenance {
    pub fn external() -> Self {
        Provenance {
            source: "external".into(),
            seed: None,
            regularized: false,
            failed_subjects: Vec::new(),
            config_digest: None,
        }
    }
}

/// Reference statistics a response is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStats {
    pub plan: crate::spectral::BandPlan,
    /// Mean expanded response, length `2 * n_bands`.
    pub mu: DVector<f64>,
    /// Covariance of the expanded responses, `2 n_bands x 2 n_bands`.
    pub sigma: DMatrix<f64>,
    /// Raw spectral weights; scoring uses their max-normalized form.
    pub weights: WeightVector,
    /// Leave-self-in scores of the reference subjects.
    pub sample_scores: Vec<f64>,
    pub n_subjects: usize,
    pub provenance: Provenance,
}

impl ReferenceStats {
    pub fn dim(&self) -> usize {
        2 * self.plan.n_bands()
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        let d = self.dim();
        if self.mu.len() != d {
            return Err(CoreError::Dimension(format!(
                "mu has length {}, expected {d}",
                self.mu.len()
            )));
        }
        if self.sigma.nrows() != d || self.sigma.ncols() != d {
            return Err(CoreError::Dimension(format!(
                "sigma is {}x{}, expected {d}x{d}",
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if self.weights.plan != self.plan {
            return Err(CoreError::Dimension(
                "weight vector was built on a different band plan".into(),
            ));
        }
        if self.weights.w.len() != self.plan.n_bands() {
            return Err(CoreError::Dimension(format!(
                "{} weights for {} bands",
                self.weights.w.len(),
                self.plan.n_bands()
            )));
        }
        if self.weights.w.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(CoreError::Statistics(
                "weights must be non-negative and finite".into(),
            ));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Statistics("mean response is not finite".into()));
        }
        if self
            .sample_scores
            .iter()
            .any(|s| *s < 0.0 || !s.is_finite())
        {
            return Err(CoreError::Statistics(
                "sample scores must be non-negative and finite".into(),
            ));
        }
        let max_asym = (0..d)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (self.sigma[(i, j)] - self.sigma[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        let scale = self.sigma.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max_asym > 1e-9 * scale.max(1e-300) {
            return Err(CoreError::Statistics(format!(
                "covariance is not symmetric (max asymmetry {max_asym})"
            )));
        }
        if !self.sample_scores.is_empty() && self.sample_scores.len() != self.n_subjects {
            return Err(CoreError::Statistics(format!(
                "{} sample scores for {} subjects",
                self.sample_scores.len(),
                self.n_subjects
            )));
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(CoreError::Statistics(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Bootstrap settings for CDF confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Number of bootstrap resamples.
    pub n_resamples: usize,
    /// Seed of the resampling stream; fixed seeds give bit-identical output.
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 2000,
            seed: 0xB0075,
        }
    }
}

/// Empirical CDF position of a score within the reference sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    /// Fraction of reference scores strictly below the probe score.
    pub cdf: f64,
    /// Percentile bootstrap interval (2.5%, 97.5%).
    pub ci: (f64, f64),
    /// Reference scores exactly equal to the probe score; these sit on the
    /// boundary of the strict count and are reported rather than split.
    pub ties: usize,
}

/// Complete scoring result for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Weighted distance from the reference mean.
    pub score_d: f64,
    /// Unweighted Mahalanobis distance of the same response.
    pub mahalanobis: f64,
    /// Empirical CDF position of `score_d` in the reference scores.
    pub cdf: f64,
    /// Percentile bootstrap interval for `cdf`.
    pub cdf_ci: (f64, f64),
    /// Reference scores exactly equal to `score_d`.
    pub ties: usize,
    /// Which weight variant entered the S matrix.
    pub weights_used: String,
    /// Size of the reference score sample.
    pub n_reference: usize,
}

/// Flattens a band response into real coordinates:
/// `[Re h_1 .. Re h_n, Im h_1 .. Im h_n]`.
pub fn expand_frf(frf: &Frf) -> DVector<f64> {
    let n = frf.h.len();
    DVector::from_fn(
        2 * n,
        |i, _| {
            if i < n {
                frf.h[i].re
            } else {
                frf.h[i - n].im
            }
        },
    )
}

/// sqrt(v' Sigma^-1 v) through a Cholesky solve, with a residual check
/// that guards against a numerically unusable covariance.
fn solve_distance(
    chol: &Cholesky<f64, Dyn>,
    sigma: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let vnorm = v.norm();
    if vnorm == 0.0 {
        return Ok(0.0);
    }
    let x = chol.solve(v);
    let residual = (sigma * &x - v).norm() / vnorm;
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(CoreError::Statistics(format!(
            "covariance solve failed: relative residual {residual:.3e}"
        )));
    }
    Ok(v.dot(&x).max(0.0).sqrt())
}

/// Weighted distance sqrt((S d)' Sigma^-1 (S d)) for a diagonal S given as
/// per-band factors applied to both halves of the expansion.
pub fn weighted_distance(
    delta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    band_factors: &[f64],
) -> Result<f64> {
    if delta.len() != 2 * band_factors.len() {
        return Err(CoreError::Dimension(format!(
            "delta has length {}, expected {}",
            delta.len(),
            2 * band_factors.len()
        )));
    }
    if sigma.nrows() != delta.len() || sigma.ncols() != delta.len() {
        return Err(CoreError::Dimension(format!(
            "sigma is {}x{}, expected {1}x{1} to match delta",
            sigma.nrows(),
            delta.len()
        )));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| CoreError::Statistics("covariance is not positive definite".into()))?;
    let n = band_factors.len();
    let scaled = DVector::from_fn(delta.len(), |i, _| delta[i] * band_factors[i % n]);
    solve_distance(&chol, sigma, &scaled)
}

/// Scores a response against the reference with default bootstrap settings.
pub fn score(frf: &Frf, reference: &ReferenceStats) -> Result<ScoreReport> {
    score_with(frf, reference, &BootstrapConfig::default())
}

/// Scores a response against the reference.
///
/// The S matrix uses the reference's max-normalized weights; both the
/// weighted score and the unweighted Mahalanobis distance are reported.
pub fn score_with(
    frf: &Frf,
    reference: &ReferenceStats,
    bootstrap: &BootstrapConfig,
) -> Result<ScoreReport> {
    reference.validate()?;
    if frf.plan != reference.plan {
        return Err(CoreError::Dimension(
            "response and reference use different band plans".into(),
        ));
    }
    let delta = expand_frf(frf) - &reference.mu;
    let chol = reference
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| CoreError::Statistics("covariance is not positive definite".into()))?;

    let factors = reference.weights.normalized();
    let n = factors.len();
    let scaled = DVector::from_fn(delta.len(), |i, _| delta[i] * factors[i % n]);
    let score_d = solve_distance(&chol, &reference.sigma, &scaled)?;
    let mahalanobis = solve_distance(&chol, &reference.sigma, &delta)?;

    let cdf = cdf_position(score_d, reference, bootstrap)?;
    Ok(ScoreReport {
        score_d,
        mahalanobis,
        cdf: cdf.cdf,
        cdf_ci: cdf.ci,
        ties: cdf.ties,
        weights_used: "normalized".into(),
        n_reference: reference.sample_scores.len(),
    })
}

/// Empirical CDF position of `score_d` among the reference sample scores,
/// with a percentile bootstrap confidence interval.
///
/// The CDF counts strictly smaller reference scores; exact ties are
/// reported separately. Scores are sorted before resampling, so the result
/// is invariant under permutation of `sample_scores`.
pub fn cdf_position(
    score_d: f64,
    reference: &ReferenceStats,
    bootstrap: &BootstrapConfig,
) -> Result<CdfEstimate> {
    let scores = &reference.sample_scores;
    if scores.is_empty() {
        return Err(CoreError::Statistics(
            "reference has no sample scores to rank against".into(),
        ));
    }
    if bootstrap.n_resamples == 0 {
        return Err(CoreError::Statistics(
            "bootstrap needs at least one resample".into(),
        ));
    }
    if !score_d.is_finite() {
        return Err(CoreError::Statistics(format!(
            "score must be finite, got {score_d}"
        )));
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let below = sorted.iter().filter(|&&s| s < score_d).count();
    let ties = sorted.iter().filter(|&&s| s == score_d).count();
    let cdf = below as f64 / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap.seed);
    let mut fractions = Vec::with_capacity(bootstrap.n_resamples);
    for _ in 0..bootstrap.n_resamples {
        let mut count = 0usize;
        for _ in 0..n {
            let idx = rng.gen_range(0..n);
            if sorted[idx] < score_d {
                count += 1;
            }
        }
        fractions.push(count as f64 / n as f64);
    }
    fractions.sort_by(f64::total_cmp);
    let b = fractions.len();
    let lo = fractions[((b as f64) * 0.025).floor() as usize];
    let hi = fractions[(((b as f64) * 0.975).floor() as usize).min(b - 1)];
    Ok(CdfEstimate {
        cdf,
        ci: (lo, hi),
        ties,
    })
}

/// Fits reference statistics to a set of responses.
///
/// The mean and unbiased covariance of the expanded responses are
/// computed; a near-singular covariance gets a documented diagonal ridge.
/// Each input is then scored against the fitted statistics (leaving
/// itself in the sample) to populate `sample_scores`.
pub fn fit_reference(frfs: &[Frf], weights: &WeightVector) -> Result<ReferenceStats> {
    if frfs.len() < 2 {
        return Err(CoreError::Statistics(format!(
            "reference fit needs at least 2 responses, got {}",
            frfs.len()
        )));
    }
    let plan = &frfs[0].plan;
    plan.validate()?;
    if weights.plan != *plan {
        return Err(CoreError::Dimension(
            "weights were built on a different band plan".into(),
        ));
    }
    for (i, frf) in frfs.iter().enumerate() {
        if frf.plan != *plan {
            return Err(CoreError::Dimension(format!(
                "response {i} uses a different band plan"
            )));
        }
    }

    let n = frfs.len();
    let d = 2 * plan.n_bands();
    let xs: Vec<DVector<f64>> = frfs.iter().map(expand_frf).collect();
    let mut mu = DVector::zeros(d);
    for x in &xs {
        mu += x;
    }
    mu /= n as f64;

    let mut sigma = DMatrix::zeros(d, d);
    for x in &xs {
        let c = x - &mu;
        sigma += &c * c.transpose();
    }
    sigma /= (n - 1) as f64;

    let eigen = sigma.clone().symmetric_eigen();
    let lambda_max = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let lambda_min = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let mut regularized = false;
    if lambda_min < EIGENVALUE_RATIO_FLOOR * lambda_max.max(0.0) {
        let ridge = (RIDGE_EPSILON * sigma.trace() / d as f64).max(RIDGE_ABS_FLOOR);
        for i in 0..d {
            sigma[(i, i)] += ridge;
        }
        regularized = true;
    }

    let mut stats = ReferenceStats {
        plan: plan.clone(),
        mu,
        sigma,
        weights: weights.clone(),
        sample_scores: Vec::new(),
        n_subjects: n,
        provenance: Provenance {
            regularized,
            ..Provenance::external()
        },
    };
    stats.validate()?;

    let chol = stats
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| CoreError::Statistics("covariance is not positive definite".into()))?;
    let factors = stats.weights.normalized();
    let nb = factors.len();
    let mut sample_scores = Vec::with_capacity(n);
    for x in &xs {
        let delta = x - &stats.mu;
        let scaled = DVector::from_fn(d, |i, _| delta[i] * factors[i % nb]);
        sample_scores.push(solve_distance(&chol, &stats.sigma, &scaled)?);
    }
    stats.sample_scores = sample_scores;
    Ok(stats)
}
