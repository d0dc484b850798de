//! Statistics for comparing execution times: mean, descriptive summary,
//! Cohen's d and ordinary least squares.
//!
//! Standard deviations are sample (n − 1) deviations throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("pooled variance is zero; effect size undefined")]
    DegenerateVariance,
    #[error("regression needs at least two distinct sizes")]
    SingularDesign,
    #[error("reference mean must be positive, got {0}")]
    NonPositiveMean(f64),
}

pub fn mean_time(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Sample variance; `None` below two samples.
pub fn sample_variance(samples: &[f64]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mean = mean_time(samples).ok()?;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Some(ss / (samples.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub n: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// False when n == 1, in which case `std_s` is reported as 0.
    pub std_defined: bool,
}

pub fn descriptive(samples: &[f64]) -> Result<DescriptiveStats, StatsError> {
    let mean_s = mean_time(samples)?;
    let variance = sample_variance(samples);
    let min_s = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max_s = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DescriptiveStats {
        n: samples.len(),
        // Rounding can put the mean a hair outside [min, max] for near-constant data.
        mean_s: mean_s.clamp(min_s, max_s),
        std_s: variance.map_or(0.0, f64::sqrt),
        min_s,
        max_s,
        std_defined: variance.is_some(),
    })
}

/// How the two group variances are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// `sqrt((var_a + var_b) / 2)`: the standard pooled deviation.
    #[default]
    Corrected,
    /// `(var_a + var_b) / 2` with no square root, as sometimes printed.
    Literal,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corrected" => Ok(Pooling::Corrected),
            "literal" => Ok(Pooling::Literal),
            other => Err(format!(
                "unknown pooling `{other}` (expected `corrected` or `literal`)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub d: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub pooled_sd: f64,
    pub pooling: Pooling,
}

pub fn cohens_d(samples_a: &[f64], samples_b: &[f64]) -> Result<EffectSize, StatsError> {
    cohens_d_with(samples_a, samples_b, Pooling::Corrected)
}

/// `d = (mean_a − mean_b) / pooled`. A group with a single sample
/// contributes zero variance.
pub fn cohens_d_with(
    samples_a: &[f64],
    samples_b: &[f64],
    pooling: Pooling,
) -> Result<EffectSize, StatsError> {
    let mean_a = mean_time(samples_a)?;
    let mean_b = mean_time(samples_b)?;
    let var_a = sample_variance(samples_a).unwrap_or(0.0);
    let var_b = sample_variance(samples_b).unwrap_or(0.0);
    let averaged = (var_a + var_b) / 2.0;
    let pooled_sd = match pooling {
        Pooling::Corrected => averaged.sqrt(),
        Pooling::Literal => averaged,
    };
    if pooled_sd.is_nan() || pooled_sd <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok(EffectSize {
        d: (mean_a - mean_b) / pooled_sd,
        mean_a,
        mean_b,
        pooled_sd,
        pooling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta0: f64,
    pub beta1: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.beta0 + self.beta1 * x
    }
}

/// Ordinary least squares fit of `y = beta0 + beta1 * x`, computed in
/// centered form. `r_squared` is 1 when y has no variance (the fit is exact).
pub fn linear_fit(points: &[(f64, f64)]) -> Result<RegressionFit, StatsError> {
    if points.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        let dx = x - x_mean;
        (sxx + dx * dx, sxy + dx * (y - y_mean))
    });
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(StatsError::SingularDesign);
    }
    let beta1 = sxy / sxx;
    let beta0 = y_mean - beta1 * x_mean;
    let (ss_res, ss_tot) = points.iter().fold((0.0, 0.0), |(res, tot), &(x, y)| {
        let e = y - (beta0 + beta1 * x);
        (res + e * e, tot + (y - y_mean) * (y - y_mean))
    });
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RegressionFit {
        beta0,
        beta1,
        r_squared,
        n: points.len(),
    })
}

/// How much faster `mean_fast` is than `mean_slow`, in percent of the slower.
pub fn pct_difference(mean_slow: f64, mean_fast: f64) -> Result<f64, StatsError> {
    if mean_slow.is_nan() || mean_slow <= 0.0 {
        return Err(StatsError::NonPositiveMean(mean_slow));
    }
    Ok(100.0 * (mean_slow - mean_fast) / mean_slow)
}
