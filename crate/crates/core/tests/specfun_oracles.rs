use llpp_core::quadrature::{integrate_to_infinity, QuadOptions};
use llpp_core::specfun::{
    erlang_cdf, gamma_antiderivative, log_binomial, log_gamma, log_permutation, signed_logsumexp,
    upper_incomplete_gamma_zero,
};
use llpp_core::{GammaParams, Sign, SignedLogValue};
use proptest::prelude::*;

fn opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-14,
        max_intervals: 4000,
    }
}

// Regularized lower incomplete gamma by the series e^{-z} z^k Σ z^n / Γ(k+n+1).
fn regularized_p(k: u32, z: f64) -> f64 {
    let mut term = 1.0;
    for j in 1..=k {
        term *= z / j as f64;
    }
    let mut sum = 0.0;
    let mut n = 0u32;
    loop {
        sum += term;
        n += 1;
        term *= z / (k + n) as f64;
        if term < 1e-18 * sum {
            break;
        }
    }
    (sum * (-z).exp()).min(1.0)
}

fn u128_factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

#[test]
fn cdf_matches_regularized_series() {
    for k in 1..=12u32 {
        for &z in &[0.01, 0.1, 1.0, 5.0, 20.0] {
            let theta = 0.066;
            let p = GammaParams::new(k, theta).unwrap();
            let got = erlang_cdf(z * theta, &p).unwrap();
            let want = regularized_p(k, z);
            assert!(
                (got - want).abs() <= 1e-12,
                "k = {k}, z = {z}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn cdf_reference_value() {
    let p = GammaParams::new(4, 0.066).unwrap();
    let v = erlang_cdf(0.264, &p).unwrap();
    assert!((v - 0.566_529_879_633_290_2).abs() < 1e-12, "{v}");
}

#[test]
fn combinatorics_match_exact_integers() {
    for n in 0..=30u64 {
        for r in 0..=n {
            let binom = u128_factorial(n) / (u128_factorial(r) * u128_factorial(n - r));
            let perm = u128_factorial(n) / u128_factorial(n - r);
            let lb = log_binomial(n, r).unwrap();
            let lp = log_permutation(n, r).unwrap();
            assert!(
                (lb - (binom as f64).ln()).abs() <= 1e-12 * (1.0 + lb.abs()),
                "C({n},{r})"
            );
            assert!(
                (lp - (perm as f64).ln()).abs() <= 1e-12 * (1.0 + lp.abs()),
                "P({n},{r})"
            );
        }
    }
    assert!(log_binomial(3, 4).is_err());
    assert!(log_permutation(3, 4).is_err());
}

#[test]
fn log_gamma_integers() {
    for n in 1..=30u64 {
        let want = (u128_factorial(n - 1) as f64).ln();
        assert!((log_gamma(n as f64).unwrap() - want).abs() <= 1e-12 * (1.0 + want));
    }
    assert!(log_gamma(0.0).is_err());
    assert!(log_gamma(f64::NAN).is_err());
}

#[test]
fn e1_matches_quadrature() {
    let n = 60;
    for i in 0..=n {
        // Log-spaced grid over [0.01, 20].
        let x = 0.01 * (2000.0f64).powf(i as f64 / n as f64);
        let quad = integrate_to_infinity(|t| (-t).exp() / t, x, opts()).value;
        let e1 = upper_incomplete_gamma_zero(x).unwrap();
        assert!((e1 - quad).abs() / quad <= 1e-10, "x = {x}: {e1} vs {quad}");
    }
    assert!(upper_incomplete_gamma_zero(1.0).unwrap() > upper_incomplete_gamma_zero(2.0).unwrap());
    assert!(upper_incomplete_gamma_zero(0.0).is_err());
}

#[test]
fn cdf_derivative_is_density() {
    for &(k, theta) in &[(1u32, 0.066), (4, 0.066), (8, 0.3), (12, 1.0), (32, 0.5)] {
        let p = GammaParams::new(k, theta).unwrap();
        let mean = p.mean();
        for i in 1..=40 {
            let x = 3.0 * mean * i as f64 / 40.0;
            let h = 1e-6 * x.max(1.0);
            let lo = erlang_cdf((x - h).max(0.0), &p).unwrap();
            let hi = erlang_cdf(x + h, &p).unwrap();
            let fd = (hi - lo) / (x + h - (x - h).max(0.0));
            let dens = p.density(x);
            // Rounding in two O(1) CDF values bounds the difference quotient's
            // accuracy at about ε/h; skip points where that floor alone exceeds the tolerance.
            if f64::EPSILON / h > 1e-6 * dens {
                continue;
            }
            assert!(
                (fd - dens).abs() / dens <= 1e-5,
                "k = {k}, x = {x}: {fd} vs {dens}"
            );
        }
    }
}

#[test]
fn antiderivative_matches_quadrature() {
    let p = GammaParams::new(4, 0.066).unwrap();
    let tail = integrate_to_infinity(|t| p.density(t), 0.2, opts()).value;
    let g = gamma_antiderivative(0.2, &p).unwrap();
    assert!((g + tail).abs() <= 1e-10, "{g} vs {}", -tail);
}

#[test]
fn antiderivative_bounded_and_monotone() {
    for k in [1u32, 2, 5, 12, 32] {
        let p = GammaParams::new(k, 0.1).unwrap();
        assert_eq!(gamma_antiderivative(0.0, &p).unwrap(), -1.0);
        let mut prev = -1.0;
        for i in 0..=200 {
            let x = 0.02 * i as f64 * k as f64;
            let g = gamma_antiderivative(x, &p).unwrap();
            assert!((-1.0..=0.0).contains(&g));
            assert!(g >= prev, "k = {k}, x = {x}");
            prev = g;
        }
        assert!(gamma_antiderivative(-0.1, &p).is_err());
    }
}

#[test]
fn exponential_antiderivative() {
    let p = GammaParams::new(1, 0.25).unwrap();
    for &x in &[0.0, 0.1, 0.7, 3.0] {
        assert!((gamma_antiderivative(x, &p).unwrap() + (-x / 0.25f64).exp()).abs() < 1e-15);
    }
}

#[test]
fn logsumexp_of_copies() {
    for &a in &[1e-300, 0.37, 5.0, 1e200] {
        for n in [1usize, 2, 7, 1000] {
            let terms = vec![SignedLogValue::positive(f64::ln(a)); n];
            let s = signed_logsumexp(&terms);
            assert_eq!(s.sign(), Sign::Positive);
            let want = (n as f64).ln() + a.ln();
            assert!((s.log_magnitude() - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

fn signed_value() -> impl Strategy<Value = SignedLogValue> {
    (
        prop_oneof![Just(Sign::Positive), Just(Sign::Negative)],
        -50.0f64..50.0,
    )
        .prop_map(|(s, l)| SignedLogValue::new(s, l))
}

proptest! {
    #[test]
    fn logsumexp_permutation_invariant(mut terms in prop::collection::vec(signed_value(), 1..20), seed in any::<u64>()) {
        let a = signed_logsumexp(&terms);
        // Deterministic shuffle driven by the seed.
        let n = terms.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            terms.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = signed_logsumexp(&terms);
        let scale: f64 = terms.iter().map(|t| t.log_magnitude()).fold(f64::NEG_INFINITY, f64::max);
        // Compare materialized sums relative to the largest term.
        let va = a.sign().as_f64() * (a.log_magnitude() - scale).exp();
        let vb = b.sign().as_f64() * (b.log_magnitude() - scale).exp();
        prop_assert!((va - vb).abs() <= 1e-12 * n as f64);
    }

    #[test]
    fn signed_log_round_trip(v in signed_value()) {
        let again = SignedLogValue::from_f64(v.to_f64());
        prop_assert_eq!(again.sign(), v.sign());
        prop_assert!((again.log_magnitude() - v.log_magnitude()).abs() <= 4.0 * f64::EPSILON * v.log_magnitude().abs().max(1.0));
    }

    #[test]
    fn float_round_trip(v in -1e100f64..1e100) {
        let back = SignedLogValue::from_f64(v).to_f64();
        // exp(ln v) inherits |ln v|·ε relative error.
        prop_assert!((back - v).abs() <= (v.abs().ln().abs() + 2.0) * f64::EPSILON * v.abs());
    }
}
