use llpp_core::margin_prob::{
    margin_probability_closed, margin_probability_compact, margin_probability_mc,
    margin_probability_quad, MarginQuery,
};
use llpp_core::quadrature::{integrate_to_infinity, QuadOptions};
use llpp_core::GammaParams;

fn params(k: u32, theta: f64) -> GammaParams {
    GammaParams::new(k, theta).unwrap()
}

fn closed(delta: f64, k: u32, theta: f64) -> f64 {
    margin_probability_closed(&MarginQuery::new(delta, params(k, theta)).unwrap())
        .unwrap()
        .total
}

fn ln_fact(n: u32) -> f64 {
    (1..=n).map(|v| (v as f64).ln()).sum()
}

fn density(x: f64, k: u32, theta: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((k as f64 - 1.0) * x.ln() - x / theta - k as f64 * theta.ln() - ln_fact(k - 1)).exp()
}

// Erlang survival e^{-z} Σ_{n<k} z^n / n!.
fn survival(x: f64, k: u32, theta: f64) -> f64 {
    let z = x / theta;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..k {
        term *= z / n as f64;
        sum += term;
    }
    (-z).exp() * sum
}

// By symmetry P(|X-Y| <= δ) = 1 - 2 P(Y > X + δ).
fn oracle(delta: f64, k: u32, theta: f64) -> f64 {
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-14,
        max_intervals: 4000,
    };
    let tail = integrate_to_infinity(
        |x| density(x, k, theta) * survival(x + delta, k, theta),
        0.0,
        opts,
    )
    .value;
    1.0 - 2.0 * tail
}

#[test]
fn closed_matches_independent_oracle() {
    for k in [1u32, 2, 3, 4, 6, 8, 12] {
        for &theta in &[0.066, 0.5, 2.0] {
            for &r in &[0.05, 0.3, 1.0, 1.5, 3.0] {
                let delta = r * theta;
                let c = closed(delta, k, theta);
                let o = oracle(delta, k, theta);
                assert!(
                    (c - o).abs() <= 1e-8,
                    "k = {k}, theta = {theta}, delta = {delta}: {c} vs {o}"
                );
            }
        }
    }
}

#[test]
fn closed_matches_crate_quadrature_and_compact() {
    for k in [1u32, 2, 4, 8, 16] {
        for &delta in &[0.01, 0.02, 0.06, 0.125, 0.3, 0.5] {
            let q = MarginQuery::new(delta, params(k, 0.066)).unwrap();
            let c = margin_probability_closed(&q).unwrap().total;
            let quad = margin_probability_quad(&q).unwrap();
            let compact = margin_probability_compact(&q).unwrap();
            assert!(
                (c - quad).abs() <= 1e-8,
                "k = {k}, delta = {delta}: {c} vs {quad}"
            );
            assert!((c - compact).abs() <= 1e-10);
        }
    }
}

#[test]
fn closed_form_cancellation_at_large_shape_and_margin() {
    // The f(-δ) series carries e^{+δ/Θ} magnitudes with alternating signs, so
    // at large k·δ/Θ double precision loses digits. Still far below table precision.
    let q = MarginQuery::new(0.8, params(16, 0.066)).unwrap();
    let c = margin_probability_closed(&q).unwrap().total;
    let reference = 0.965_842_739_609_710_7;
    assert!((margin_probability_quad(&q).unwrap() - reference).abs() <= 1e-12);
    assert!((c - reference).abs() <= 1e-6, "{c}");
}

#[test]
fn monotone_in_delta() {
    for k in [1u32, 2, 4, 8] {
        let mut prev = 0.0;
        for i in 1..=50 {
            let delta = 0.02 * i as f64 * k as f64 * 0.066;
            let v = closed(delta, k, 0.066);
            assert!(
                v >= prev && (0.0..=1.0).contains(&v),
                "k = {k}, delta = {delta}"
            );
            prev = v;
        }
    }
}

#[test]
fn scale_equivariant() {
    for &c in &[0.1, 4.0, 30.0] {
        for &delta in &[0.03, 0.1, 0.4] {
            let a = closed(delta, 4, 0.066);
            let b = closed(c * delta, 4, c * 0.066);
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn wide_margin_tends_to_one() {
    for k in [1u32, 4, 8, 16] {
        let v = closed(100.0 * k as f64 * 0.066, k, 0.066);
        assert!((v - 1.0).abs() <= 1e-6, "k = {k}: {v}");
    }
}

#[test]
fn exponential_law_over_grid() {
    let theta = 0.066;
    for i in 1..=20 {
        let delta = 0.01 * i as f64;
        let want = 1.0 - (-delta / theta).exp();
        assert!((closed(delta, 1, theta) - want).abs() <= 1e-8);
    }
}

#[test]
fn mc_agrees() {
    for &delta in &[0.02, 0.1, 0.15] {
        let q = MarginQuery::new(delta, params(4, 0.066)).unwrap();
        let est = margin_probability_mc(&q, 1_000_000, 17).unwrap();
        let c = margin_probability_closed(&q).unwrap().total;
        assert!(
            (est.value - c).abs() <= 4.0 * est.std_error,
            "delta = {delta}: {est:?} vs {c}"
        );
    }
}

#[test]
fn mc_deterministic() {
    let q = MarginQuery::new(0.1, params(3, 0.1)).unwrap();
    assert_eq!(
        margin_probability_mc(&q, 50_000, 4).unwrap(),
        margin_probability_mc(&q, 50_000, 4).unwrap()
    );
}
