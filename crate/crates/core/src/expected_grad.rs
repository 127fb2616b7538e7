//! Expected KL-ranking gradient conditional on a true-loss gap δ.
//!
//! For i.i.d. Erlang losses `x` and `y = x + δ`, the expected final-layer
//! gradient is `(q_i - φ(δ))(θ_i - θ_j)` with
//! `φ(δ) = E[x / (2x + δ) | y - x = δ]`. [`phi_quad`] evaluates the
//! conditional expectation directly and is the reference; [`phi_closed`]
//! assembles the series form over a vanishing band `[δ₁, δ₂]` and
//! [`phi_mc`] estimates it by rejection sampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin_prob::{quadrature_upper_limit, weighted_f_terms};
use crate::quadrature::{integrate_piecewise, QuadOptions};
use crate::sampling::{erlang_draw, sharded, McEstimate};
use crate::specfun::{
    cancellation_ratio, exp_integral_e1_scaled, factorial, ln_factorial, log_binomial,
    log_permutation, neumaier_sum, signed_logsumexp, GammaParams, Sign, SignedLogValue,
};

/// Largest admissible relative band offset `ε` in `δ₁ = δ₂(1 - ε)`.
pub const MAX_EPSILON_REL: f64 = 1e-3;
pub const DEFAULT_EPSILON_REL: f64 = 1e-4;
/// Maximum disagreement between the `ε` and `ε/2` evaluations of [`phi_closed`].
pub const RICHARDSON_GUARD: f64 = 1e-4;
/// Largest tolerated relative rounding error in any `I(u)` series.
const I_TERM_PRECISION_GUARD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedGradQuery {
    delta2: f64,
    params: GammaParams,
    epsilon_rel: f64,
}

impl ExpectedGradQuery {
    pub fn new(delta2: f64, params: GammaParams, epsilon_rel: f64) -> Result<Self> {
        if !(delta2.is_finite() && delta2 > 0.0) {
            return Err(Error::Domain(format!(
                "delta2 must be positive and finite, got {delta2}"
            )));
        }
        if !(epsilon_rel > 0.0 && epsilon_rel <= MAX_EPSILON_REL) {
            return Err(Error::Domain(format!(
                "epsilon_rel must lie in (0, {MAX_EPSILON_REL}], got {epsilon_rel}"
            )));
        }
        Ok(Self {
            delta2,
            params,
            epsilon_rel,
        })
    }

    pub fn with_default_epsilon(delta2: f64, params: GammaParams) -> Result<Self> {
        Self::new(delta2, params, DEFAULT_EPSILON_REL)
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn delta1(&self) -> f64 {
        self.delta2 * (1.0 - self.epsilon_rel)
    }

    pub fn params(&self) -> &GammaParams {
        &self.params
    }

    pub fn epsilon_rel(&self) -> f64 {
        self.epsilon_rel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedGradResult {
    /// Coefficient subtracted from `q_i`; lies in `(0, 1/2]`.
    pub phi: f64,
    /// `P(δ₁ <= y - x <= δ₂)` at the query's `ε`.
    pub normalizer_d: f64,
    /// `I(u)` keyed by `u = k + i`.
    pub i_terms: BTreeMap<u32, f64>,
}

/// `𝔻 = Θ Σ_n 1/Γ(n) Σ_i [f(i,n,k,δ₁,Θ) - f(i,n,k,δ₂,Θ)]`.
pub fn pair_density_normalizer(query: &ExpectedGradQuery) -> Result<f64> {
    let k = query.params.k();
    let theta = query.params.theta();
    let mut terms = weighted_f_terms(k, query.delta1(), theta, |_| 0.0)?;
    terms.extend(
        weighted_f_terms(k, query.delta2, theta, |_| 0.0)?
            .into_iter()
            .map(|t| -t),
    );
    Ok(signed_logsumexp(&terms).to_f64())
}

fn check_i_term_args(u: u32, delta2: f64, theta: f64) -> Result<()> {
    if u == 0 {
        return Err(Error::Domain("i_term requires u >= 1".into()));
    }
    if !(delta2.is_finite() && delta2 > 0.0) || !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Domain(format!(
            "i_term requires positive delta2 and theta, got delta2 = {delta2}, theta = {theta}"
        )));
    }
    Ok(())
}

// Terms of the I(u) series in linear space, using
// C(u-1, j) / P(u-1, u-j) = 1 / (j (u-1-j)!). None when any term overflows.
fn i_term_linear(u: u32, z: f64) -> Result<Option<Vec<f64>>> {
    let mut terms = Vec::with_capacity(u as usize);
    // e^{z} ∫_{δ₂}^∞ γ(t; j, Θ) dt = Σ_{n<j} z^n / n!, accumulated as j grows.
    let mut tail = 0.0;
    let mut power_over_fact = 1.0;
    for j in 1..u {
        if j > 1 {
            power_over_fact *= z / (j - 1) as f64;
        }
        tail += power_over_fact;
        let m = u - 1 - j;
        let mag = z.powi((u - j) as i32) * tail / (j as f64 * factorial(m as u64));
        terms.push(if m.is_multiple_of(2) { mag } else { -mag });
    }
    let last = z.powi(u as i32) / factorial(u as u64 - 1) * exp_integral_e1_scaled(z)?;
    terms.push(if (u - 1).is_multiple_of(2) {
        last
    } else {
        -last
    });
    Ok(terms.iter().all(|t| t.is_finite()).then_some(terms))
}

fn i_term_log_series(u: u32, z: f64) -> Result<Vec<SignedLogValue>> {
    let lz = z.ln();
    let u64_ = u as u64;
    let mut terms = Vec::with_capacity(u as usize);
    for j in 1..u64_ {
        let tail: Vec<SignedLogValue> = (0..j)
            .map(|n| SignedLogValue::positive(n as f64 * lz - ln_factorial(n)))
            .collect();
        let log_tail = signed_logsumexp(&tail).log_magnitude();
        let log_mag = log_binomial(u64_ - 1, j)? + (u64_ - j) as f64 * lz
            - log_permutation(u64_ - 1, u64_ - j)?
            + log_tail;
        let sign = if (u64_ - 1 - j).is_multiple_of(2) {
            Sign::Positive
        } else {
            Sign::Negative
        };
        terms.push(SignedLogValue::new(sign, log_mag));
    }
    let sign = if (u - 1).is_multiple_of(2) {
        Sign::Positive
    } else {
        Sign::Negative
    };
    let log_e1 = exp_integral_e1_scaled(z)?.ln();
    terms.push(SignedLogValue::new(
        sign,
        u as f64 * lz - ln_factorial(u64_ - 1) + log_e1,
    ));
    Ok(terms)
}

/// `I(u)` and the condition number `Σ|term| / |I|` of its alternating series.
pub fn i_term_with_condition(u: u32, delta2: f64, theta: f64) -> Result<(f64, f64)> {
    check_i_term_args(u, delta2, theta)?;
    let z = delta2 / theta;
    if let Some(terms) = i_term_linear(u, z)? {
        let value = neumaier_sum(terms.iter().copied());
        let abs: f64 = terms.iter().map(|t| t.abs()).sum();
        let cond = if value == 0.0 {
            f64::INFINITY
        } else {
            abs / value.abs()
        };
        return Ok((value, cond));
    }
    let series = i_term_log_series(u, z)?;
    Ok((
        signed_logsumexp(&series).to_f64(),
        cancellation_ratio(&series),
    ))
}

/// `I(u) = ∫_{δ₂}^∞ γ(t - δ₂; u, Θ) · δ₂/t dt`, the mean of `δ₂/(2x + δ₂)`
/// under `x ~ γ(u, Θ/2)`, in closed form:
///
/// `e^{z} [ Σ_{j=1}^{u-1} (-1)^{u-1-j} C(u-1,j) z^{u-j} / P(u-1,u-j) · Q(j, z)
///        + (-1)^{u-1} z^u / (u-1)! · E₁(z) ]`, with `z = δ₂/Θ`.
///
/// The series alternates; its rounding error grows with the condition number
/// reported by [`i_term_with_condition`].
pub fn i_term(u: u32, delta2: f64, theta: f64) -> Result<f64> {
    Ok(i_term_with_condition(u, delta2, theta)?.0)
}

struct BandEvaluation {
    phi: f64,
    normalizer: f64,
}

fn phi_at_band(
    params: &GammaParams,
    delta1: f64,
    delta2: f64,
    i_terms: &BTreeMap<u32, f64>,
) -> Result<BandEvaluation> {
    let k = params.k();
    let theta = params.theta();
    let f1 = weighted_f_terms(k, delta1, theta, |_| 0.0)?;
    let f2 = weighted_f_terms(k, delta2, theta, |_| 0.0)?;
    let mut den = Vec::with_capacity(f1.len());
    let mut num = Vec::with_capacity(f1.len());
    let mut idx = 0;
    for n in 1..=k {
        for i in 0..n {
            let diff = signed_logsumexp(&[f1[idx], -f2[idx]]);
            let weight = SignedLogValue::from_f64(i_terms[&(k + i)]);
            den.push(diff);
            num.push(diff * weight);
            idx += 1;
        }
    }
    let normalizer = signed_logsumexp(&den);
    if normalizer.sign() != Sign::Positive {
        return Err(Error::NumericInstability(format!(
            "pair density normalizer is not positive at delta1 = {delta1}, delta2 = {delta2}"
        )));
    }
    let mean_weight = signed_logsumexp(&num).to_f64() / normalizer.to_f64();
    Ok(BandEvaluation {
        phi: 0.5 * (1.0 - mean_weight),
        normalizer: normalizer.to_f64(),
    })
}

/// Closed-form `φ(δ₂)`, extrapolated to `δ₁ → δ₂` from bands at `ε` and `ε/2`.
///
/// Fails with [`Error::NumericInstability`] when the two bands disagree by more
/// than [`RICHARDSON_GUARD`] or an `I(u)` series cancels below usable precision;
/// fall back to [`phi_quad`] in that case.
pub fn phi_closed(query: &ExpectedGradQuery) -> Result<ExpectedGradResult> {
    let k = query.params.k();
    let theta = query.params.theta();
    let delta2 = query.delta2;
    let mut i_terms = BTreeMap::new();
    for u in k..2 * k {
        let (value, cond) = i_term_with_condition(u, delta2, theta)?;
        if !(cond * f64::EPSILON <= I_TERM_PRECISION_GUARD) {
            return Err(Error::NumericInstability(format!(
                "I({u}) series cancels with condition number {cond:e}"
            )));
        }
        i_terms.insert(u, value);
    }
    let eps = query.epsilon_rel;
    let coarse = phi_at_band(&query.params, delta2 * (1.0 - eps), delta2, &i_terms)?;
    let fine = phi_at_band(&query.params, delta2 * (1.0 - 0.5 * eps), delta2, &i_terms)?;
    let gap = (coarse.phi - fine.phi).abs();
    if !(gap <= RICHARDSON_GUARD) {
        return Err(Error::NumericInstability(format!(
            "band evaluations disagree by {gap:e} at delta2 = {delta2}"
        )));
    }
    Ok(ExpectedGradResult {
        phi: 2.0 * fine.phi - coarse.phi,
        normalizer_d: coarse.normalizer,
        i_terms,
    })
}

/// `φ(δ) = ∫ x/(2x+δ) γ(x) γ(x+δ) dx / ∫ γ(x) γ(x+δ) dx` by adaptive quadrature.
pub fn phi_quad(delta2: f64, params: &GammaParams) -> Result<f64> {
    if !(delta2.is_finite() && delta2 >= 0.0) {
        return Err(Error::Domain(format!(
            "delta must be finite and >= 0, got {delta2}"
        )));
    }
    if delta2 == 0.0 {
        return Ok(0.5);
    }
    // Work in units of Θ: s = x/Θ, d = δ/Θ. Constant factors cancel in the ratio.
    let km1 = params.k() as f64 - 1.0;
    let d = delta2 / params.theta();
    let upper = quadrature_upper_limit(params) / params.theta();
    let mode = 0.5 * km1;
    let log_weight = |s: f64| km1 * (s.ln() + (s + d).ln()) - 2.0 * s;
    let offset = if km1 > 0.0 {
        log_weight(mode.max(0.5))
    } else {
        0.0
    };
    let weight = move |s: f64| {
        if s <= 0.0 {
            if km1 == 0.0 {
                (-offset).exp()
            } else {
                0.0
            }
        } else {
            (log_weight(s) - offset).exp()
        }
    };
    let mut breaks = vec![0.0, upper];
    for b in [mode, 2.0 * mode + 1.0, d] {
        if b > 0.0 && b < upper {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    let den = integrate_piecewise(weight, &breaks, opts).value;
    let num = integrate_piecewise(|s| weight(s) * s / (2.0 * s + d), &breaks, opts).value;
    Ok(num / den)
}

/// Rejection-sampling estimate of `φ(δ)`: pairs are kept when `y - x` falls
/// within `band_width / 2` of δ (either ordering), and `x/(x+y)` is averaged
/// with `x` the smaller member.
pub fn phi_mc(
    delta2: f64,
    band_width: f64,
    params: &GammaParams,
    samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if !(delta2.is_finite() && delta2 >= 0.0) {
        return Err(Error::Domain(format!(
            "delta must be finite and >= 0, got {delta2}"
        )));
    }
    if !(band_width > 0.0 && band_width.is_finite()) {
        return Err(Error::Domain(format!(
            "band_width must be positive, got {band_width}"
        )));
    }
    if delta2 > 0.0 && band_width > delta2 / 10.0 {
        return Err(Error::Domain(format!(
            "band_width {band_width} exceeds delta/10 = {}",
            delta2 / 10.0
        )));
    }
    let k = params.k();
    let theta = params.theta();
    let half = 0.5 * band_width;
    let shards = sharded(samples, seed, |rng, n| {
        let (mut count, mut sum, mut sum_sq) = (0u64, 0.0f64, 0.0f64);
        let mut push = |v: f64| {
            count += 1;
            sum += v;
            sum_sq += v * v;
        };
        for _ in 0..n {
            let a = erlang_draw(rng, k, theta);
            let b = erlang_draw(rng, k, theta);
            if (b - a - delta2).abs() <= half {
                push(a / (a + b));
            }
            if delta2 > 0.0 && (a - b - delta2).abs() <= half {
                push(b / (a + b));
            }
        }
        (count, sum, sum_sq)
    });
    let (count, sum, sum_sq) = shards.into_iter().fold((0u64, 0.0, 0.0), |acc, s| {
        (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2)
    });
    if count < 1000 {
        return Err(Error::InsufficientAcceptance {
            accepted: count as usize,
            required: 1000,
        });
    }
    let n = count as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        count,
    })
}

/// `(q_i - φ(δ)) (θ_i - θ_j)` with φ from [`phi_quad`].
pub fn expected_gradient_vector(
    q_i: f64,
    theta_i: &[f64],
    theta_j: &[f64],
    delta: f64,
    params: &GammaParams,
) -> Result<Vec<f64>> {
    if theta_i.len() != theta_j.len() {
        return Err(Error::Dimension(format!(
            "theta_i has {} entries, theta_j has {}",
            theta_i.len(),
            theta_j.len()
        )));
    }
    if !(0.0..=1.0).contains(&q_i) {
        return Err(Error::Domain(format!(
            "q_i must be a probability, got {q_i}"
        )));
    }
    let coef = q_i - phi_quad(delta, params)?;
    Ok(theta_i
        .iter()
        .zip(theta_j)
        .map(|(a, b)| coef * (a - b))
        .collect())
}
