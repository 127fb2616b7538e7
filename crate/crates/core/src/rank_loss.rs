//! Pairwise loss-ranking objectives on a single linear head `l̂ = θᵀw`.
//!
//! The hinge objective penalises misordered predicted losses by a margin ξ; the
//! KL objective matches the softmax of predicted losses to the normalised true
//! losses. Both come with exact gradients and a central-difference verifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True losses, penultimate features and head weights for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub l_i: f64,
    pub l_j: f64,
    pub theta_i: Vec<f64>,
    pub theta_j: Vec<f64>,
    pub w: Vec<f64>,
}

impl RankPair {
    pub fn new(
        l_i: f64,
        l_j: f64,
        theta_i: Vec<f64>,
        theta_j: Vec<f64>,
        w: Vec<f64>,
    ) -> Result<Self> {
        let pair = Self {
            l_i,
            l_j,
            theta_i,
            theta_j,
            w,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w.len();
        if self.theta_i.len() != d || self.theta_j.len() != d {
            return Err(Error::Dimension(format!(
                "theta_i has {}, theta_j has {}, w has {} entries",
                self.theta_i.len(),
                self.theta_j.len(),
                d
            )));
        }
        if !(self.l_i.is_finite() && self.l_j.is_finite() && self.l_i >= 0.0 && self.l_j >= 0.0) {
            return Err(Error::Domain(format!(
                "true losses must be finite and >= 0, got ({}, {})",
                self.l_i, self.l_j
            )));
        }
        let all_finite = self
            .theta_i
            .iter()
            .chain(&self.theta_j)
            .chain(&self.w)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain(
                "feature and weight vectors must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn lhat_i(&self) -> f64 {
        dot(&self.theta_i, &self.w)
    }

    pub fn lhat_j(&self) -> f64 {
        dot(&self.theta_j, &self.w)
    }

    /// The same pair with `i` and `j` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            l_i: self.l_j,
            l_j: self.l_i,
            theta_i: self.theta_j.clone(),
            theta_j: self.theta_i.clone(),
            w: self.w.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    xi: f64,
}

impl HingeConfig {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(Error::Domain(format!(
                "hinge margin xi must be finite and >= 0, got {xi}"
            )));
        }
        Ok(Self { xi })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self { xi: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGradient {
    pub grad_w: Vec<f64>,
    pub grad_theta_i: Vec<f64>,
    pub grad_theta_j: Vec<f64>,
    pub loss_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Hinge(HingeConfig),
    Kl,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scaled(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| c * x).collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Sign with `sign(0) = 0`.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `p_i = l_i / (l_i + l_j)`; `(0.5, 0.5)` when both losses are zero.
pub fn sampling_probs(l_i: f64, l_j: f64) -> (f64, f64) {
    let total = l_i + l_j;
    if total == 0.0 {
        return (0.5, 0.5);
    }
    let p_i = l_i / total;
    (p_i, 1.0 - p_i)
}

fn log_softmax(lhat_i: f64, lhat_j: f64) -> (f64, f64) {
    let m = lhat_i.max(lhat_j);
    let lse = m + ((lhat_i - m).exp() + (lhat_j - m).exp()).ln();
    (lhat_i - lse, lhat_j - lse)
}

/// Two-way softmax with max subtraction.
pub fn softmax_probs(lhat_i: f64, lhat_j: f64) -> (f64, f64) {
    let m = lhat_i.max(lhat_j);
    let (e_i, e_j) = ((lhat_i - m).exp(), (lhat_j - m).exp());
    (e_i / (e_i + e_j), e_j / (e_i + e_j))
}

/// `max(0, -sign(l_i - l_j)(l̂_i - l̂_j) + ξ)`.
pub fn hinge_loss(pair: &RankPair, cfg: &HingeConfig) -> Result<f64> {
    pair.validate()?;
    Ok(hinge_argument(pair, cfg).max(0.0))
}

fn hinge_argument(pair: &RankPair, cfg: &HingeConfig) -> f64 {
    -sign0(pair.l_i - pair.l_j) * (pair.lhat_i() - pair.lhat_j()) + cfg.xi
}

/// Hinge gradient; the zero subgradient is returned on and below the kink.
pub fn hinge_gradient(pair: &RankPair, cfg: &HingeConfig) -> Result<RankGradient> {
    pair.validate()?;
    let arg = hinge_argument(pair, cfg);
    let s = sign0(pair.l_i - pair.l_j);
    let d = pair.w.len();
    if arg <= 0.0 || s == 0.0 {
        return Ok(RankGradient {
            grad_w: vec![0.0; d],
            grad_theta_i: vec![0.0; d],
            grad_theta_j: vec![0.0; d],
            loss_value: arg.max(0.0),
        });
    }
    let delta_theta = diff(&pair.theta_i, &pair.theta_j);
    Ok(RankGradient {
        grad_w: scaled(&delta_theta, -s),
        grad_theta_i: scaled(&pair.w, -s),
        grad_theta_j: scaled(&pair.w, s),
        loss_value: arg,
    })
}

/// `KL(p || q)` with `0 log 0 = 0` and `log q` taken from a stable log-softmax.
pub fn kl_loss(pair: &RankPair) -> Result<f64> {
    pair.validate()?;
    Ok(kl_value(pair))
}

fn kl_value(pair: &RankPair) -> f64 {
    let (p_i, p_j) = sampling_probs(pair.l_i, pair.l_j);
    let (lq_i, lq_j) = log_softmax(pair.lhat_i(), pair.lhat_j());
    let term = |p: f64, lq: f64| if p > 0.0 { p * (p.ln() - lq) } else { 0.0 };
    (term(p_i, lq_i) + term(p_j, lq_j)).max(0.0)
}

pub fn kl_gradient(pair: &RankPair) -> Result<RankGradient> {
    pair.validate()?;
    let (p_i, _) = sampling_probs(pair.l_i, pair.l_j);
    let (q_i, _) = softmax_probs(pair.lhat_i(), pair.lhat_j());
    let c = q_i - p_i;
    Ok(RankGradient {
        grad_w: scaled(&diff(&pair.theta_i, &pair.theta_j), c),
        grad_theta_i: scaled(&pair.w, c),
        grad_theta_j: scaled(&pair.w, -c),
        loss_value: kl_value(pair),
    })
}

pub fn objective_loss(pair: &RankPair, objective: &Objective) -> Result<f64> {
    match objective {
        Objective::Hinge(cfg) => hinge_loss(pair, cfg),
        Objective::Kl => kl_loss(pair),
    }
}

pub fn objective_gradient(pair: &RankPair, objective: &Objective) -> Result<RankGradient> {
    match objective {
        Objective::Hinge(cfg) => hinge_gradient(pair, cfg),
        Objective::Kl => kl_gradient(pair),
    }
}

/// Largest relative error `|a - n| / max(1, |a|, |n|)` between the analytic
/// gradient and central differences over every coordinate of `w`, `θ_i`, `θ_j`.
///
/// For the hinge, pairs whose hinge argument lies within `10h` times the largest
/// directional slope of the kink are rejected.
pub fn finite_difference_check(pair: &RankPair, objective: &Objective, h: f64) -> Result<f64> {
    pair.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step h must be positive, got {h}")));
    }
    if let Objective::Hinge(cfg) = objective {
        if sign0(pair.l_i - pair.l_j) != 0.0 {
            let slope = pair
                .w
                .iter()
                .chain(diff(&pair.theta_i, &pair.theta_j).iter())
                .fold(1.0f64, |m, v| m.max(v.abs()));
            let margin = hinge_argument(pair, cfg);
            let threshold = 10.0 * h * slope;
            if margin.abs() <= threshold {
                return Err(Error::KinkProximity { margin, threshold });
            }
        }
    }
    let analytic = objective_gradient(pair, objective)?;
    let loss = |p: &RankPair| objective_loss(p, objective);

    let mut worst = 0.0f64;
    let mut probe = pair.clone();
    let mut check = |select: fn(&mut RankPair) -> &mut Vec<f64>, grad: &[f64]| -> Result<()> {
        for (c, &a) in grad.iter().enumerate() {
            let orig = select(&mut probe)[c];
            select(&mut probe)[c] = orig + h;
            let up = loss(&probe)?;
            select(&mut probe)[c] = orig - h;
            let down = loss(&probe)?;
            select(&mut probe)[c] = orig;
            let n = (up - down) / (2.0 * h);
            worst = worst.max((a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()));
        }
        Ok(())
    };
    check(|p| &mut p.w, &analytic.grad_w)?;
    check(|p| &mut p.theta_i, &analytic.grad_theta_i)?;
    check(|p| &mut p.theta_j, &analytic.grad_theta_j)?;
    Ok(worst)
}
