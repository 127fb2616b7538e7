//! Probability that two i.i.d. Erlang losses land within a margin δ of each other.
//!
//! Three independent routes are provided: the closed-form four-term series,
//! adaptive quadrature over the outer variable with a closed inner CDF, and
//! sum-of-exponentials Monte Carlo.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_piecewise, QuadOptions};
use crate::sampling::{erlang_draw, sharded, McEstimate};
use crate::specfun::{
    erlang_cdf, erlang_lower, ln_erlang_lower, ln_erlang_upper, ln_factorial, log_binomial,
    log_permutation, neumaier_sum, signed_logsumexp, GammaParams, Sign, SignedLogValue,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginQuery {
    delta: f64,
    params: GammaParams,
}

impl MarginQuery {
    pub fn new(delta: f64, params: GammaParams) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!(
                "margin delta must be finite and >= 0, got {delta}"
            )));
        }
        Ok(Self { delta, params })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn params(&self) -> &GammaParams {
        &self.params
    }
}

/// The four pieces of the closed form and their sum.
///
/// `term_b` is the Erlang CDF at δ; `term_a + term_c` collapses to a single
/// series and `term_d` carries the alternating `(-δ)` expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBreakdown {
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub term_d: f64,
    pub total: f64,
}

/// `f(i, n, k, δ, θ) = e^{-δ/θ} C(n-1, i) P(k+i-1, i) δ^{n-1-i} / (2^{k+i} θ^{n-i})`.
///
/// `delta` may be negative; the magnitude then carries `e^{+|δ|/θ}` and the sign
/// follows `(-1)^{n-1-i}`.
pub fn f_coefficient(i: u32, n: u32, k: u32, delta: f64, theta: f64) -> Result<SignedLogValue> {
    if n == 0 || k == 0 || i > n - 1 || n > k {
        return Err(Error::Domain(format!(
            "f_coefficient requires 0 <= i <= n-1 <= k-1, got i = {i}, n = {n}, k = {k}"
        )));
    }
    if !(theta.is_finite() && theta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("f_coefficient requires theta > 0 and finite delta, got theta = {theta}, delta = {delta}")));
    }
    let power = n - 1 - i;
    if delta == 0.0 && power > 0 {
        return Ok(SignedLogValue::ZERO);
    }
    let (i, n, k) = (i as u64, n as u64, k as u64);
    let mut log_mag = -delta / theta + log_binomial(n - 1, i)? + log_permutation(k + i - 1, i)?
        - (k + i) as f64 * std::f64::consts::LN_2
        - (n - i) as f64 * theta.ln();
    if power > 0 {
        log_mag += power as f64 * delta.abs().ln();
    }
    let sign = if delta < 0.0 && power % 2 == 1 {
        Sign::Negative
    } else {
        Sign::Positive
    };
    Ok(SignedLogValue::new(sign, log_mag))
}

/// Signed-log terms of `Θ Σ_n 1/Γ(n) Σ_i f(i, n, k, δ, Θ) · weight(k+i)`, where
/// `log_weight` returns the log of a positive per-shape weight.
pub(crate) fn weighted_f_terms(
    k: u32,
    delta: f64,
    theta: f64,
    log_weight: impl Fn(u32) -> f64,
) -> Result<Vec<SignedLogValue>> {
    let mut terms = Vec::with_capacity((k * (k + 1) / 2) as usize);
    for n in 1..=k {
        let prefactor = theta.ln() - ln_factorial(n as u64 - 1);
        for i in 0..n {
            let f = f_coefficient(i, n, k, delta, theta)?;
            let w = log_weight(k + i);
            terms.push(f * SignedLogValue::new(Sign::Positive, prefactor + w));
        }
    }
    Ok(terms)
}

/// Closed-form `P(|X - Y| <= δ)` as the four-term breakdown.
pub fn margin_probability_closed(query: &MarginQuery) -> Result<MarginBreakdown> {
    let k = query.params.k();
    let theta = query.params.theta();
    let delta = query.delta;
    // Inner integrals are Erlang(k+i, θ/2) masses on [0, δ] and [δ, ∞).
    let z_half = 2.0 * delta / theta;

    // A = -Θ Σ Σ f(δ) / Γ(n) · ∫_0^δ γ(x, k+i, Θ/2)
    let a_terms = weighted_f_terms(k, delta, theta, |u| ln_erlang_lower(u, z_half))?;
    // C = -Θ Σ Σ f(δ) / Γ(n) · ∫_δ^∞ γ(x, k+i, Θ/2)
    let c_terms = weighted_f_terms(k, delta, theta, |u| ln_erlang_upper(u, z_half))?;
    // D = +Θ Σ Σ f(-δ) / Γ(n) · ∫_δ^∞ γ(x, k+i, Θ/2)
    let d_terms = weighted_f_terms(k, -delta, theta, |u| ln_erlang_upper(u, z_half))?;

    let term_a = -signed_logsumexp(&a_terms).to_f64();
    let term_b = erlang_lower(k, delta / theta);
    let term_c = -signed_logsumexp(&c_terms).to_f64();
    let term_d = signed_logsumexp(&d_terms).to_f64();
    let total = neumaier_sum([term_a, term_b, term_c, term_d]);
    Ok(MarginBreakdown {
        term_a,
        term_b,
        term_c,
        term_d,
        total,
    })
}

/// The compact assembled form
/// `1 + G(δ,k,Θ) - Θ ΣΣ f(δ)/Γ(n) - Θ ΣΣ f(-δ)/Γ(n) · G(δ, k+i, Θ/2)`,
/// with `A + C` merged analytically. Cross-check for [`margin_probability_closed`].
pub fn margin_probability_compact(query: &MarginQuery) -> Result<f64> {
    let k = query.params.k();
    let theta = query.params.theta();
    let delta = query.delta;
    let z_half = 2.0 * delta / theta;
    let merged = weighted_f_terms(k, delta, theta, |_| 0.0)?;
    let tail = weighted_f_terms(k, -delta, theta, |u| ln_erlang_upper(u, z_half))?;
    let one_plus_g = erlang_lower(k, delta / theta);
    Ok(neumaier_sum([
        one_plus_g,
        -signed_logsumexp(&merged).to_f64(),
        signed_logsumexp(&tail).to_f64(),
    ]))
}

/// Upper truncation point `kΘ + 40√k Θ` for outer integrals over one Erlang variable.
pub fn quadrature_upper_limit(params: &GammaParams) -> f64 {
    let k = params.k() as f64;
    params.theta() * (k + 40.0 * k.sqrt())
}

/// `∫_0^δ γ(x) F(x+δ) dx + ∫_δ^∞ γ(x) [F(x+δ) - F(x-δ)] dx` by adaptive quadrature.
pub fn margin_probability_quad(query: &MarginQuery) -> Result<f64> {
    let p = query.params;
    let delta = query.delta;
    if delta == 0.0 {
        return Ok(0.0);
    }
    let upper = quadrature_upper_limit(&p);
    let mut breaks = vec![0.0, upper];
    for b in [delta, p.mean(), 0.5 * p.mean(), 2.0 * p.mean()] {
        if b > 0.0 && b < upper {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let inner = |x: f64| -> f64 {
        let hi = erlang_cdf(x + delta, &p).unwrap_or(1.0);
        let lo = if x > delta {
            erlang_cdf(x - delta, &p).unwrap_or(0.0)
        } else {
            0.0
        };
        p.density(x) * (hi - lo)
    };
    let opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    Ok(integrate_piecewise(inner, &breaks, opts).value)
}

/// Fraction of `samples` i.i.d. pairs with `|x - y| <= δ`, with binomial standard error.
pub fn margin_probability_mc(query: &MarginQuery, samples: u64, seed: u64) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::SampleSize {
            got: samples as usize,
            min: 1000,
        });
    }
    let k = query.params.k();
    let theta = query.params.theta();
    let delta = query.delta;
    let hits: u64 = sharded(samples, seed, |rng, n| {
        let mut hits = 0u64;
        for _ in 0..n {
            let x = erlang_draw(rng, k, theta);
            let y = erlang_draw(rng, k, theta);
            if (x - y).abs() <= delta {
                hits += 1;
            }
        }
        hits
    })
    .into_iter()
    .sum();
    let p = hits as f64 / samples as f64;
    Ok(McEstimate {
        value: p,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        count: samples,
    })
}
