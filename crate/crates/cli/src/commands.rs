use std::path::Path;

use anyhow::{bail, Context};
use llpp_core::active_sim::{run_simulation, SimConfig};
use llpp_core::expected_grad::{phi_closed, phi_mc, phi_quad, ExpectedGradQuery};
use llpp_core::gamma_fit::{clip_zero_losses, fit_integer_gamma};
use llpp_core::margin_prob::{
    margin_probability_closed, margin_probability_mc, margin_probability_quad, MarginQuery,
};
use llpp_core::rank_loss::{finite_difference_check, HingeConfig, Objective, RankPair};
use llpp_core::{Error, GammaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::table::{Cell, OutputTable};

pub const MARGIN_CLOSED_QUAD_TOL: f64 = 1e-8;
pub const PHI_CLOSED_QUAD_TOL: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const MC_SIGMAS: f64 = 4.0;

/// A table plus any tolerance gates that failed while producing it.
pub struct CommandOutput {
    pub table: OutputTable,
    pub gate_failures: Vec<String>,
}

fn mc_gate(failures: &mut Vec<String>, label: &str, estimate: f64, stderr: f64, reference: f64) {
    let gap = (estimate - reference).abs();
    // A zero standard error means every draw agreed; allow only rounding-level gaps then.
    let allowed = if stderr > 0.0 {
        MC_SIGMAS * stderr
    } else {
        1e-9
    };
    if gap > allowed {
        failures.push(format!(
            "{label}: |mc - reference| = {gap:e} exceeds {allowed:e}"
        ));
    }
}

pub fn margin_table(
    k: u32,
    theta: f64,
    deltas: &[f64],
    mc_samples: u64,
    seed: u64,
) -> anyhow::Result<CommandOutput> {
    let params = GammaParams::new(k, theta)?;
    let mut columns = vec![
        "delta",
        "closed",
        "quad",
        "mc",
        "mc_stderr",
        "abs_closed_minus_quad",
    ];
    if k == 1 {
        columns.push("exponential_law");
    }
    let mut table = OutputTable::new(&columns);
    let mut failures = Vec::new();
    for &delta in deltas {
        let q = MarginQuery::new(delta, params)?;
        let closed = margin_probability_closed(&q)?.total;
        let quad = margin_probability_quad(&q)?;
        let mc = margin_probability_mc(&q, mc_samples, seed)?;
        let gap = (closed - quad).abs();
        if gap > MARGIN_CLOSED_QUAD_TOL {
            failures.push(format!(
                "delta = {delta}: |closed - quad| = {gap:e} exceeds {MARGIN_CLOSED_QUAD_TOL:e}"
            ));
        }
        mc_gate(
            &mut failures,
            &format!("delta = {delta}"),
            mc.value,
            mc.std_error,
            closed,
        );
        let mut row = vec![
            Cell::Num(delta),
            Cell::Num(closed),
            Cell::Num(quad),
            Cell::Num(mc.value),
            Cell::Num(mc.std_error),
            Cell::Num(gap),
        ];
        if k == 1 {
            let law = 1.0 - (-delta / theta).exp();
            let law_gap = (closed - law).abs();
            if law_gap > MARGIN_CLOSED_QUAD_TOL {
                failures.push(format!("delta = {delta}: |closed - exponential law| = {law_gap:e} exceeds {MARGIN_CLOSED_QUAD_TOL:e}"));
            }
            row.push(Cell::Num(law));
        }
        table.push(row);
    }
    Ok(CommandOutput {
        table,
        gate_failures: failures,
    })
}

pub fn phi_table(
    k: u32,
    theta: f64,
    deltas: &[f64],
    mc_samples: u64,
    seed: u64,
) -> anyhow::Result<CommandOutput> {
    let params = GammaParams::new(k, theta)?;
    let mut table = OutputTable::new(&[
        "delta",
        "phi_quad",
        "phi_closed",
        "closed_status",
        "phi_mc",
        "phi_mc_stderr",
        "mc_status",
        "coefficient",
    ]);
    let mut failures = Vec::new();
    for &delta in deltas {
        let quad = phi_quad(delta, &params)?;
        let (closed, closed_status) = if delta == 0.0 {
            // The closed form needs a nonzero band below δ; the symmetric limit is exact.
            (0.5, "limit")
        } else {
            match phi_closed(&ExpectedGradQuery::with_default_epsilon(delta, params)?) {
                Ok(r) => {
                    let gap = (r.phi - quad).abs();
                    if gap > PHI_CLOSED_QUAD_TOL {
                        failures.push(format!(
                            "delta = {delta}: |phi_closed - phi_quad| = {gap:e} exceeds {PHI_CLOSED_QUAD_TOL:e}"
                        ));
                    }
                    (r.phi, "ok")
                }
                Err(Error::NumericInstability(_)) => (f64::NAN, "unstable"),
                Err(e) => return Err(e.into()),
            }
        };
        let band = if delta > 0.0 {
            (delta / 10.0).min(0.005)
        } else {
            0.005
        };
        let (mc, stderr, mc_status) = match phi_mc(delta, band, &params, mc_samples, seed) {
            Ok(est) => {
                mc_gate(
                    &mut failures,
                    &format!("delta = {delta}"),
                    est.value,
                    est.std_error,
                    quad,
                );
                (est.value, est.std_error, "ok")
            }
            Err(Error::InsufficientAcceptance { .. }) => (f64::NAN, f64::NAN, "insufficient"),
            Err(e) => return Err(e.into()),
        };
        table.push(vec![
            Cell::Num(delta),
            Cell::Num(quad),
            Cell::Num(closed),
            Cell::from(closed_status),
            Cell::Num(mc),
            Cell::Num(stderr),
            Cell::from(mc_status),
            Cell::Num(0.5 - quad),
        ]);
    }
    Ok(CommandOutput {
        table,
        gate_failures: failures,
    })
}

fn random_pair(rng: &mut ChaCha8Rng) -> RankPair {
    let d = rng.random_range(1..=6);
    let mut v = || {
        (0..d)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    let (theta_i, theta_j, w) = (v(), v(), v());
    RankPair {
        l_i: rng.random_range(0.0..1.0),
        l_j: rng.random_range(0.0..1.0),
        theta_i,
        theta_j,
        w,
    }
}

/// Max finite-difference error per objective over `trials` random pairs.
/// Hinge pairs too close to the kink are redrawn.
pub fn gradcheck(seed: u64, trials: usize, h: f64) -> anyhow::Result<CommandOutput> {
    let mut table =
        OutputTable::new(&["objective", "trials", "redrawn_near_kink", "max_rel_error"]);
    let mut failures = Vec::new();
    if trials == 0 {
        return Ok(CommandOutput {
            table,
            gate_failures: failures,
        });
    }
    let objectives = [
        ("kl", Objective::Kl),
        ("hinge", Objective::Hinge(HingeConfig::new(0.1)?)),
    ];
    for (stream, (name, objective)) in objectives.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let mut worst = 0.0f64;
        let mut redrawn = 0i64;
        let mut done = 0;
        while done < trials {
            let pair = random_pair(&mut rng);
            match finite_difference_check(&pair, objective, h) {
                Ok(err) => {
                    worst = worst.max(err);
                    done += 1;
                }
                Err(Error::KinkProximity { .. }) => redrawn += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if worst > GRADCHECK_TOL {
            failures.push(format!(
                "{name}: max relative error {worst:e} exceeds {GRADCHECK_TOL:e}"
            ));
        }
        table.push(vec![
            Cell::from(*name),
            Cell::Int(trials as i64),
            Cell::Int(redrawn),
            Cell::Num(worst),
        ]);
    }
    Ok(CommandOutput {
        table,
        gate_failures: failures,
    })
}

/// Parses one loss per line; blank lines are skipped.
pub fn read_losses(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().with_context(|| {
            format!(
                "{}:{}: cannot parse {line:?} as a number",
                path.display(),
                n + 1
            )
        })?;
        if !(v.is_finite() && v >= 0.0) {
            bail!(
                "{}:{}: loss must be finite and >= 0, got {v}",
                path.display(),
                n + 1
            );
        }
        out.push(v);
    }
    Ok(out)
}

pub fn fit(path: &Path, k_max: u32) -> anyhow::Result<(CommandOutput, GammaParams)> {
    let losses = clip_zero_losses(&read_losses(path)?);
    let result = fit_integer_gamma(&losses, k_max)?;
    let mut table = OutputTable::new(&["k", "theta", "log_likelihood", "selected"]);
    for c in &result.candidates {
        table.push(vec![
            Cell::Int(c.k as i64),
            Cell::Num(c.theta),
            Cell::Num(c.log_likelihood),
            Cell::Int(i64::from(c.k == result.params.k())),
        ]);
    }
    Ok((
        CommandOutput {
            table,
            gate_failures: Vec::new(),
        },
        result.params,
    ))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    /// SHA-256 of the resolved configuration serialised as JSON.
    pub config_sha256: String,
    pub config: SimConfig,
}

pub fn load_sim_config(path: &Path, seed_override: Option<u64>) -> anyhow::Result<SimConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config: SimConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    config
        .validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(config)
}

pub fn simulate(config: &SimConfig) -> anyhow::Result<(CommandOutput, Manifest)> {
    let report = run_simulation(config)?;
    let mut table = OutputTable::new(&[
        "cycle",
        "strategy",
        "batch_mean_true_loss",
        "batch_std_true_loss",
        "holdout_mse",
        "pool_corr",
    ]);
    let mut failures = Vec::new();
    for r in &report.records {
        let metrics = [
            r.batch_mean_true_loss,
            r.batch_std_true_loss,
            r.holdout_mse,
            r.pool_corr,
        ];
        if metrics.iter().any(|m| !m.is_finite()) {
            failures.push(format!(
                "cycle {} {}: non-finite metric",
                r.cycle, r.strategy
            ));
        }
        table.push(vec![
            Cell::Int(r.cycle as i64),
            Cell::from(r.strategy.as_str()),
            Cell::Num(r.batch_mean_true_loss),
            Cell::Num(r.batch_std_true_loss),
            Cell::Num(r.holdout_mse),
            Cell::Num(r.pool_corr),
        ]);
    }
    let canonical = serde_json::to_vec(config)?;
    let manifest = Manifest {
        tool: "llpp",
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config_sha256: format!("{:x}", Sha256::digest(&canonical)),
        config: config.clone(),
    };
    Ok((
        CommandOutput {
            table,
            gate_failures: failures,
        },
        manifest,
    ))
}
