//! Integer-shape gamma maximum likelihood and the squared-residual generator.
//!
//! At fixed shape `k` the scale MLE is `mean / k`, so the fit is an exhaustive
//! scan over `k = 1..=k_max` of closed-form log-likelihoods.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::stream_rng;
use crate::specfun::{ln_factorial, GammaParams, K_MAX};

pub const MIN_FIT_SAMPLES: usize = 100;

/// Value substituted for exact-zero losses before fitting.
pub const ZERO_LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCandidate {
    pub k: u32,
    pub theta: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: GammaParams,
    pub log_likelihood: f64,
    pub candidates: Vec<FitCandidate>,
}

/// Replaces exact zeros with [`ZERO_LOSS_FLOOR`]; other values pass through untouched.
pub fn clip_zero_losses(samples: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .map(|&x| if x == 0.0 { ZERO_LOSS_FLOOR } else { x })
        .collect()
}

pub fn fit_integer_gamma(samples: &[f64], k_max: u32) -> Result<FitResult> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::SampleSize {
            got: samples.len(),
            min: MIN_FIT_SAMPLES,
        });
    }
    if k_max == 0 || k_max > K_MAX {
        return Err(Error::Range(format!(
            "k_max must be in 1..={K_MAX}, got {k_max}"
        )));
    }
    if let Some((idx, bad)) = samples
        .iter()
        .enumerate()
        .find(|(_, x)| !(x.is_finite() && **x > 0.0))
    {
        return Err(Error::Domain(format!(
            "sample {idx} is {bad}; all samples must be finite and > 0"
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();

    let candidates: Vec<FitCandidate> = (1..=k_max)
        .map(|k| {
            let kf = k as f64;
            let theta = mean / kf;
            // Σx/θ = n·k exactly at the scale MLE.
            let ll =
                (kf - 1.0) * sum_ln - n * kf - n * kf * theta.ln() - n * ln_factorial(k as u64 - 1);
            FitCandidate {
                k,
                theta,
                log_likelihood: ll,
            }
        })
        .collect();

    // Strict comparison keeps the smaller k on ties.
    let best = candidates.iter().fold(&candidates[0], |best, c| {
        if c.log_likelihood > best.log_likelihood {
            c
        } else {
            best
        }
    });
    Ok(FitResult {
        params: GammaParams::new(best.k, best.theta)?,
        log_likelihood: best.log_likelihood,
        candidates,
    })
}

/// `count` draws of `Σ_{i=1}^{n} z_i²` with `z_i ~ N(0, σ²)`.
pub fn squared_residual_samples(
    n_gaussians: u32,
    sigma: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_gaussians == 0 || !n_gaussians.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "number of gaussians must be a positive even integer, got {n_gaussians}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..count)
        .map(|_| {
            (0..n_gaussians)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (sigma * z).powi(2)
                })
                .sum()
        })
        .collect())
}

/// Kolmogorov–Smirnov distance between the empirical distribution of `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
