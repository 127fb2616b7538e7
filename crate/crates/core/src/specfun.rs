//! Scalar special functions for integer-shape gamma (Erlang) distributions.
//!
//! Everything downstream sums alternating series whose individual terms can
//! overflow or underflow, so the combinatorial helpers return logarithms and
//! [`SignedLogValue`] carries a sign alongside a log-magnitude.

use std::cmp::Ordering;
use std::ops::{Mul, Neg};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported integer shape.
pub const K_MAX: u32 = 32;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082_402_43;
const MAX_SERIES_TERMS: usize = 10_000;

/// Integer shape `k` and scale `theta` of a gamma (Erlang) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    k: u32,
    theta: f64,
}

impl GammaParams {
    pub fn new(k: u32, theta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("shape k must be a positive integer".into()));
        }
        if k > K_MAX {
            return Err(Error::Range(format!(
                "shape k = {k} exceeds k_max = {K_MAX}"
            )));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::Domain(format!(
                "scale theta must be positive and finite, got {theta}"
            )));
        }
        Ok(Self { k, theta })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn mean(&self) -> f64 {
        self.k as f64 * self.theta
    }

    /// Density `x^{k-1} e^{-x/θ} / (θ^k Γ(k))`.
    pub fn density(&self, x: f64) -> f64 {
        erlang_density(x, self.k, self.theta)
    }
}

pub(crate) fn erlang_density(x: f64, k: u32, theta: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if k == 1 { 1.0 / theta } else { 0.0 };
    }
    let z = x / theta;
    ((k as f64 - 1.0) * z.ln() - z - ln_factorial(k as u64 - 1)).exp() / theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Zero => 0.0,
            Sign::Positive => 1.0,
        }
    }
}

impl Mul for Sign {
    type Output = Sign;
    fn mul(self, rhs: Sign) -> Sign {
        match (self, rhs) {
            (Sign::Zero, _) | (_, Sign::Zero) => Sign::Zero,
            (a, b) if a == b => Sign::Positive,
            _ => Sign::Negative,
        }
    }
}

impl Neg for Sign {
    type Output = Sign;
    fn neg(self) -> Sign {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Zero => Sign::Zero,
            Sign::Positive => Sign::Negative,
        }
    }
}

/// A real number stored as `sign * exp(log_magnitude)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLogValue {
    sign: Sign,
    log_magnitude: f64,
}

impl SignedLogValue {
    pub const ZERO: SignedLogValue = SignedLogValue {
        sign: Sign::Zero,
        log_magnitude: f64::NEG_INFINITY,
    };

    pub fn new(sign: Sign, log_magnitude: f64) -> Self {
        if sign == Sign::Zero || log_magnitude == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self {
                sign,
                log_magnitude,
            }
        }
    }

    pub fn positive(log_magnitude: f64) -> Self {
        Self::new(Sign::Positive, log_magnitude)
    }

    pub fn from_f64(v: f64) -> Self {
        match v.partial_cmp(&0.0) {
            Some(Ordering::Greater) => Self::new(Sign::Positive, v.ln()),
            Some(Ordering::Less) => Self::new(Sign::Negative, (-v).ln()),
            _ => Self::ZERO,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self.sign {
            Sign::Zero => 0.0,
            s => s.as_f64() * self.log_magnitude.exp(),
        }
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn log_magnitude(&self) -> f64 {
        self.log_magnitude
    }

    pub fn is_zero(&self) -> bool {
        self.sign == Sign::Zero
    }
}

impl Mul for SignedLogValue {
    type Output = SignedLogValue;
    fn mul(self, rhs: SignedLogValue) -> SignedLogValue {
        SignedLogValue::new(self.sign * rhs.sign, self.log_magnitude + rhs.log_magnitude)
    }
}

impl Neg for SignedLogValue {
    type Output = SignedLogValue;
    fn neg(self) -> SignedLogValue {
        SignedLogValue::new(-self.sign, self.log_magnitude)
    }
}

/// Sums signed log-encoded terms. The largest magnitude is factored out and
/// the scaled terms are added with Neumaier compensation.
pub fn signed_logsumexp(terms: &[SignedLogValue]) -> SignedLogValue {
    let max = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.log_magnitude)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return SignedLogValue::ZERO;
    }
    let scaled = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.sign.as_f64() * (t.log_magnitude - max).exp());
    let s = neumaier_sum(scaled);
    if s == 0.0 {
        SignedLogValue::ZERO
    } else if s > 0.0 {
        SignedLogValue::positive(max + s.ln())
    } else {
        SignedLogValue::new(Sign::Negative, max + (-s).ln())
    }
}

/// Condition number `Σ|t| / |Σt|` of a signed-log sum; infinite when the sum cancels exactly.
pub fn cancellation_ratio(terms: &[SignedLogValue]) -> f64 {
    let abs: Vec<SignedLogValue> = terms
        .iter()
        .map(|t| {
            SignedLogValue::new(
                if t.is_zero() {
                    Sign::Zero
                } else {
                    Sign::Positive
                },
                t.log_magnitude,
            )
        })
        .collect();
    let total = signed_logsumexp(terms);
    let mag = signed_logsumexp(&abs);
    if mag.is_zero() {
        return 1.0;
    }
    if total.is_zero() {
        return f64::INFINITY;
    }
    (mag.log_magnitude - total.log_magnitude).exp()
}

pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn log_sum_exp_positive(logs: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<SignedLogValue> = logs.map(SignedLogValue::positive).collect();
    let s = signed_logsumexp(&terms);
    if s.is_zero() {
        f64::NEG_INFINITY
    } else {
        s.log_magnitude
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn factorials() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut out = Vec::with_capacity(171);
        let mut f = 1.0f64;
        out.push(f);
        for n in 1..=170u32 {
            f *= n as f64;
            out.push(f);
        }
        out
    })
}

fn factorial_logs() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| factorials().iter().map(|f| f.ln()).collect())
}

/// `n!` as a float; exact through 22!, infinite beyond 170!.
pub(crate) fn factorial(n: u64) -> f64 {
    factorials()
        .get(n as usize)
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// `ln n!`, tabulated up to 170.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    let table = factorial_logs();
    if (n as usize) < table.len() {
        table[n as usize]
    } else {
        lanczos_ln_gamma(n as f64 + 1.0)
    }
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln Γ(x)` for `x > 0`. Integer arguments up to 171 come from the factorial table.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Domain(format!(
            "log_gamma requires finite x > 0, got {x}"
        )));
    }
    if x.fract() == 0.0 && x <= 171.0 {
        return Ok(ln_factorial(x as u64 - 1));
    }
    Ok(lanczos_ln_gamma(x))
}

/// `ln C(n, r)`.
pub fn log_binomial(n: u64, r: u64) -> Result<f64> {
    if r > n {
        return Err(Error::Domain(format!(
            "binomial requires r <= n, got n = {n}, r = {r}"
        )));
    }
    let r = r.min(n - r);
    let mut c: u128 = 1;
    for i in 0..r {
        // c * (n - i) is divisible by (i + 1) at every step.
        match c.checked_mul((n - i) as u128) {
            Some(v) => c = v / (i as u128 + 1),
            None => return Ok(ln_factorial(n) - ln_factorial(r) - ln_factorial(n - r)),
        }
    }
    Ok((c as f64).ln())
}

/// `ln P(n, r) = ln(n! / (n - r)!)`.
pub fn log_permutation(n: u64, r: u64) -> Result<f64> {
    if r > n {
        return Err(Error::Domain(format!(
            "permutation requires r <= n, got n = {n}, r = {r}"
        )));
    }
    let mut p: u128 = 1;
    for v in (n - r + 1)..=n {
        match p.checked_mul(v as u128) {
            Some(q) => p = q,
            None => return Ok(ln_factorial(n) - ln_factorial(n - r)),
        }
    }
    Ok((p as f64).ln())
}

/// `ln Q(k, z)`: log of the Erlang upper tail `e^{-z} Σ_{n<k} z^n / n!`.
pub(crate) fn ln_erlang_upper(k: u32, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let lz = z.ln();
    -z + log_sum_exp_positive((0..k as u64).map(|n| n as f64 * lz - ln_factorial(n)))
}

/// `ln P(k, z)`: log of the Erlang CDF at `z = x/θ`.
pub(crate) fn ln_erlang_lower(k: u32, z: f64) -> f64 {
    if z == 0.0 {
        return f64::NEG_INFINITY;
    }
    if z < k as f64 {
        // e^{-z} z^k / k! * Σ_m z^m / ((k+1)…(k+m)); all terms positive.
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for m in 1..MAX_SERIES_TERMS {
            term *= z / (k as f64 + m as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        -z + k as f64 * z.ln() - ln_factorial(k as u64) + sum.ln()
    } else {
        (-ln_erlang_upper(k, z).exp()).ln_1p()
    }
}

pub(crate) fn erlang_upper(k: u32, z: f64) -> f64 {
    ln_erlang_upper(k, z).exp()
}

pub(crate) fn erlang_lower(k: u32, z: f64) -> f64 {
    ln_erlang_lower(k, z).exp()
}

fn check_nonneg(x: f64, what: &str) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("{what} requires x >= 0, got {x}")));
    }
    Ok(())
}

/// Antiderivative `G(x, k, θ) = -e^{-x/θ} Σ_{n=1}^{k} (x/θ)^{n-1} / (n-1)!` of the
/// gamma density; `G(0) = -1` and `G(∞) = 0`.
pub fn gamma_antiderivative(x: f64, params: &GammaParams) -> Result<f64> {
    check_nonneg(x, "gamma_antiderivative")?;
    Ok(-erlang_upper(params.k, x / params.theta))
}

/// Erlang CDF `G(x) - G(0)`. Evaluated through the lower series below the
/// mode so small probabilities keep full relative precision.
pub fn erlang_cdf(x: f64, params: &GammaParams) -> Result<f64> {
    check_nonneg(x, "erlang_cdf")?;
    Ok(erlang_lower(params.k, x / params.theta))
}

/// `e^{x} E₁(x)` for `x > 0`.
pub fn exp_integral_e1_scaled(x: f64) -> Result<f64> {
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::Domain(format!("E1 requires x > 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x < 1.0 {
        return Ok(e1_series(x) * x.exp());
    }
    Ok(e1_continued_fraction_scaled(x))
}

/// Upper incomplete gamma at order zero, `Γ(0, x) = E₁(x) = ∫_x^∞ e^{-t}/t dt`.
pub fn upper_incomplete_gamma_zero(x: f64) -> Result<f64> {
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::Domain(format!(
            "Γ(0, x) diverges for x <= 0, got {x}"
        )));
    }
    if x < 1.0 {
        return Ok(e1_series(x));
    }
    Ok(e1_continued_fraction_scaled(x) * (-x).exp())
}

fn e1_series(x: f64) -> f64 {
    // E₁(x) = -γ - ln x - Σ_{n≥1} (-x)^n / (n · n!)
    let mut term = 1.0f64;
    let mut sum = 0.0f64;
    for n in 1..MAX_SERIES_TERMS {
        term *= -x / n as f64;
        let contrib = term / n as f64;
        sum += contrib;
        if contrib.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

fn e1_continued_fraction_scaled(x: f64) -> f64 {
    // Modified Lentz on E₁(x) e^{x} = 1/(x+1- 1/(x+3- 4/(x+5- …))).
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_SERIES_TERMS {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}
