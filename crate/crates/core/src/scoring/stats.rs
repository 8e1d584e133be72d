//! Statistical machinery: bootstrap percentile intervals, Welch's t-test,
//! Pearson correlation, and expected calibration error.
//!
//! Bootstrap resamples are each driven by their own RNG derived from
//! (seed, resample index) via a splitmix64 mix, so results are identical no
//! matter how many threads execute them or in what order.

use crate::exec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in input")]
    ZeroVariance,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n−1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG for resample `index`: a pure function of (seed, index).
fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    ))
}

fn resampled_mean(values: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    let mut sum = 0.0;
    for _ in 0..n {
        sum += values[rng.random_range(0..n)];
    }
    sum / n as f64
}

/// Percentile with linear interpolation over an already-sorted slice.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = q * last as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn check_bootstrap_inputs(
    values: &[f64],
    n_resamples: usize,
    level: f64,
) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if n_resamples == 0 {
        return Err(StatsError::InvalidParam("n_resamples must be ≥ 1".into()));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(StatsError::InvalidParam(format!(
            "confidence level {level} outside (0,1)"
        )));
    }
    Ok(())
}

fn interval_from_means(mut means: Vec<f64>, level: f64) -> (f64, f64) {
    means.sort_by(|a, b| a.partial_cmp(b).expect("bootstrap means are finite"));
    let alpha = (1.0 - level) / 2.0;
    (
        sorted_quantile(&means, alpha),
        sorted_quantile(&means, 1.0 - alpha),
    )
}

/// Percentile bootstrap CI of the mean — sequential resampling loop.
pub fn bootstrap_ci_seq(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check_bootstrap_inputs(values, n_resamples, level)?;
    let means: Vec<f64> = (0..n_resamples)
        .map(|i| resampled_mean(values, &mut resample_rng(seed, i)))
        .collect();
    Ok(interval_from_means(means, level))
}

/// Percentile bootstrap CI of the mean — rayon over resamples. Bit-identical
/// to the sequential variant because each resample owns its RNG.
#[cfg(feature = "parallel")]
pub fn bootstrap_ci_par(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check_bootstrap_inputs(values, n_resamples, level)?;
    let means = exec::map_indices(n_resamples, |i| {
        resampled_mean(values, &mut resample_rng(seed, i))
    });
    Ok(interval_from_means(means, level))
}

/// Percentile bootstrap CI of the mean, using the build's default strategy.
pub fn bootstrap_ci(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    #[cfg(feature = "parallel")]
    {
        bootstrap_ci_par(values, n_resamples, level, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        bootstrap_ci_seq(values, n_resamples, level, seed)
    }
}

/// Bootstrap CI of mean(a) − mean(b): both groups are resampled
/// independently within each iteration.
pub fn bootstrap_diff_ci(
    a: &[f64],
    b: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check_bootstrap_inputs(a, n_resamples, level)?;
    check_bootstrap_inputs(b, n_resamples, level)?;
    let means = exec::map_indices(n_resamples, |i| {
        let da = resampled_mean(a, &mut resample_rng(seed, 2 * i));
        let db = resampled_mean(b, &mut resample_rng(seed, 2 * i + 1));
        da - db
    });
    Ok(interval_from_means(means, level))
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    for xs in [a, b] {
        if xs.len() < 2 {
            return Err(StatsError::TooFew {
                need: 2,
                got: xs.len(),
            });
        }
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // both samples are constant: identical means ⇒ no evidence at all,
        // different means ⇒ infinitely strong evidence
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df: na + nb - 2.0,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| StatsError::InvalidParam(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: x.len(),
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Expected calibration error over (stated percentage, correct) pairs.
/// Bins are the distinct stated percentages — the confidences here are
/// injected, discrete values, not model probabilities.
pub fn ece(outcomes: &[(u8, bool)]) -> Result<f64, StatsError> {
    if outcomes.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut bins: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for &(pct, correct) in outcomes {
        let bin = bins.entry(pct).or_insert((0, 0));
        bin.0 += 1;
        if correct {
            bin.1 += 1;
        }
    }
    let total = outcomes.len() as f64;
    Ok(bins
        .values()
        .zip(bins.keys())
        .map(|((n, n_correct), pct)| {
            let acc = *n_correct as f64 / *n as f64;
            let conf = *pct as f64 / 100.0;
            (*n as f64 / total) * (acc - conf).abs()
        })
        .sum())
}
