use llpp_core::gamma_fit::{fit_integer_gamma, ks_statistic, squared_residual_samples, FitResult};
use llpp_core::specfun::erlang_cdf;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn gamma_draws(k: f64, theta: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(k, theta).unwrap();
    (0..n).map(|_| g.sample(&mut rng)).collect()
}

fn assert_unimodal(fit: &FitResult) {
    let ll: Vec<f64> = fit.candidates.iter().map(|c| c.log_likelihood).collect();
    let peak = fit.params.k() as usize - 1;
    assert!(
        ll[..=peak].windows(2).all(|w| w[0] <= w[1]),
        "not increasing before the peak"
    );
    assert!(
        ll[peak..].windows(2).all(|w| w[0] >= w[1]),
        "not decreasing after the peak"
    );
}

// Log-likelihood summed term by term from the density.
fn ll_oracle(xs: &[f64], k: u32, theta: f64) -> f64 {
    let lf: f64 = (1..k).map(|v| (v as f64).ln()).sum();
    xs.iter()
        .map(|&x| (k as f64 - 1.0) * x.ln() - x / theta - k as f64 * theta.ln() - lf)
        .sum()
}

#[test]
fn recovers_erlang_four() {
    let xs = gamma_draws(4.0, 0.066, 100_000, 7);
    let fit = fit_integer_gamma(&xs, 32).unwrap();
    assert_eq!(fit.params.k(), 4);
    assert!(
        (0.064..=0.068).contains(&fit.params.theta()),
        "{}",
        fit.params.theta()
    );
    assert_unimodal(&fit);
    let ks = ks_statistic(&xs, |x| erlang_cdf(x, &fit.params).unwrap());
    assert!(ks <= 0.01, "KS = {ks}");
    for c in fit.candidates.iter().step_by(5) {
        let want = ll_oracle(&xs, c.k, c.theta);
        assert!((c.log_likelihood - want).abs() <= 1e-9 * want.abs());
    }
}

#[test]
fn recovers_exponential() {
    let xs = gamma_draws(1.0, 1.0, 100_000, 8);
    let fit = fit_integer_gamma(&xs, 32).unwrap();
    assert_eq!(fit.params.k(), 1);
    assert!((0.99..=1.01).contains(&fit.params.theta()));
    assert_unimodal(&fit);
}

#[test]
fn scaling_samples_scales_theta() {
    let xs = gamma_draws(3.0, 0.2, 20_000, 9);
    let base = fit_integer_gamma(&xs, 32).unwrap();
    for &c in &[0.01, 7.0] {
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let fit = fit_integer_gamma(&scaled, 32).unwrap();
        assert_eq!(fit.params.k(), base.params.k());
        assert!(
            (fit.params.theta() - c * base.params.theta()).abs() <= 1e-12 * c * base.params.theta()
        );
    }
}

#[test]
fn two_squared_gaussians_mean() {
    let xs = squared_residual_samples(2, 1.0, 100_000, 3).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 2.0).abs() <= 4.0 * (var / n).sqrt(), "{mean}");
}

#[test]
fn eight_squared_gaussians_fit() {
    for &(sigma, lo, hi) in &[(1.0, 1.9, 2.1), (0.5, 0.475, 0.525)] {
        let xs = squared_residual_samples(8, sigma, 100_000, 11).unwrap();
        let fit = fit_integer_gamma(&xs, 32).unwrap();
        assert_eq!(fit.params.k(), 4);
        assert!(
            (lo..=hi).contains(&fit.params.theta()),
            "sigma = {sigma}: {}",
            fit.params.theta()
        );
        assert_unimodal(&fit);
    }
}

#[test]
fn deterministic() {
    assert_eq!(
        squared_residual_samples(4, 0.3, 1000, 5).unwrap(),
        squared_residual_samples(4, 0.3, 1000, 5).unwrap()
    );
    let xs = gamma_draws(2.0, 1.0, 500, 1);
    assert_eq!(
        fit_integer_gamma(&xs, 10).unwrap(),
        fit_integer_gamma(&xs, 10).unwrap()
    );
}
