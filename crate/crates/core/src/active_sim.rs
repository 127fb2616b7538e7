//! Pool-based active learning on a heteroscedastic toy regression task.
//!
//! A one-hidden-layer tanh network feeds two linear heads: a predictor `ŷ` and a
//! loss head `l̂` trained with the pairwise objectives from [`crate::rank_loss`].
//! Strategies differ only in how the loss head is trained and whether it is used
//! to pick the next batch.
//!
//! Every random draw comes from its own ChaCha8 stream `cycle * 16 + purpose`
//! under the run seed, so turning one component on or off never shifts the draws
//! seen by another.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank_loss::{objective_gradient, objective_loss, HingeConfig, Objective, RankPair};
use crate::sampling::stream_rng;

const STREAM_POOL: u64 = 0;
const STREAM_INIT_TRUNK: u64 = 1;
const STREAM_INIT_LOSS_HEAD: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_PAIRING: u64 = 4;
const STREAM_ACQUIRE: u64 = 5;
const STREAMS_PER_CYCLE: u64 = 16;

fn rng_for(seed: u64, cycle: usize, purpose: u64) -> rand_chacha::ChaCha8Rng {
    stream_rng(seed, cycle as u64 * STREAMS_PER_CYCLE + purpose)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetFn {
    /// `sin(frequency · x₀)`.
    Sine {
        frequency: f64,
    },
    /// `Σ slope · xᵢ + intercept` (the same slope on every coordinate).
    Linear {
        slope: f64,
        intercept: f64,
    },
    Constant {
        value: f64,
    },
}

impl TargetFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TargetFn::Sine { frequency } => (frequency * x[0]).sin(),
            TargetFn::Linear { slope, intercept } => slope * x.iter().sum::<f64>() + intercept,
            TargetFn::Constant { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseProfile {
    /// Noise std `low` for `x₀ < threshold`, `high` otherwise.
    Step {
        threshold: f64,
        low: f64,
        high: f64,
    },
    Constant {
        std: f64,
    },
}

impl NoiseProfile {
    pub fn std_at(&self, x: &[f64]) -> f64 {
        match self {
            NoiseProfile::Step {
                threshold,
                low,
                high,
            } => {
                if x[0] < *threshold {
                    *low
                } else {
                    *high
                }
            }
            NoiseProfile::Constant { std } => *std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTask {
    pub input_dim: usize,
    pub input_low: f64,
    pub input_high: f64,
    pub target: TargetFn,
    pub noise: NoiseProfile,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            input_dim: 1,
            input_low: -1.0,
            input_high: 1.0,
            target: TargetFn::Sine { frequency: 3.0 },
            noise: NoiseProfile::Step {
                threshold: 0.0,
                low: 0.02,
                high: 0.3,
            },
        }
    }
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("task.input_dim must be >= 1".into()));
        }
        if !(self.input_low.is_finite()
            && self.input_high.is_finite()
            && self.input_low < self.input_high)
        {
            return Err(Error::Config(
                "task.input_low must be below task.input_high".into(),
            ));
        }
        let stds: &[f64] = match &self.noise {
            NoiseProfile::Step { low, high, .. } => &[*low, *high],
            NoiseProfile::Constant { std } => &[*std],
        };
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(
                "task.noise standard deviations must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Whether the noise level differs somewhere in the input box, i.e. a failure region exists.
    pub fn is_heteroscedastic(&self) -> bool {
        match &self.noise {
            NoiseProfile::Step {
                threshold,
                low,
                high,
            } => low != high && *threshold > self.input_low && *threshold < self.input_high,
            NoiseProfile::Constant { .. } => false,
        }
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.input_dim)
            .map(|_| rng.random_range(self.input_low..self.input_high))
            .collect()
    }

    /// A noisy observation `target(x) + std(x) · z`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.target.eval(x) + self.noise.std_at(x) * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: f64,
}

/// Unlabeled candidates, the labeled training set and a fixed holdout.
///
/// Targets for unlabeled items are drawn up front and revealed on acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    unlabeled: Vec<(usize, Vec<f64>)>,
    labeled: Vec<Example>,
    holdout: Vec<Example>,
    hidden_targets: BTreeMap<usize, f64>,
}

impl Pool {
    /// Draws `n_pool` candidates plus `n_holdout` holdout points; the first
    /// `n_labeled` candidates start out labeled.
    pub fn generate(
        task: &ToyTask,
        n_pool: usize,
        n_labeled: usize,
        n_holdout: usize,
        seed: u64,
    ) -> Result<Self> {
        task.validate()?;
        if n_labeled > n_pool {
            return Err(Error::Config(format!(
                "init_labeled = {n_labeled} exceeds pool_size = {n_pool}"
            )));
        }
        let mut rng = rng_for(seed, 0, STREAM_POOL);
        let mut draw = |id: usize| {
            let x = task.sample_input(&mut rng);
            let y = task.observe(&x, &mut rng);
            Example { id, x, y }
        };
        let candidates: Vec<Example> = (0..n_pool).map(&mut draw).collect();
        let holdout: Vec<Example> = (n_pool..n_pool + n_holdout).map(&mut draw).collect();
        let mut pool = Pool {
            unlabeled: Vec::new(),
            labeled: Vec::new(),
            holdout,
            hidden_targets: BTreeMap::new(),
        };
        for (i, e) in candidates.into_iter().enumerate() {
            if i < n_labeled {
                pool.labeled.push(e);
            } else {
                pool.hidden_targets.insert(e.id, e.y);
                pool.unlabeled.push((e.id, e.x));
            }
        }
        Ok(pool)
    }

    pub fn from_parts(
        labeled: Vec<Example>,
        unlabeled: Vec<Example>,
        holdout: Vec<Example>,
    ) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for e in labeled.iter().chain(&unlabeled).chain(&holdout) {
            if !ids.insert(e.id) {
                return Err(Error::Config(format!("duplicate example id {}", e.id)));
            }
        }
        let hidden_targets = unlabeled.iter().map(|e| (e.id, e.y)).collect();
        Ok(Pool {
            unlabeled: unlabeled.into_iter().map(|e| (e.id, e.x)).collect(),
            labeled,
            holdout,
            hidden_targets,
        })
    }

    pub fn unlabeled(&self) -> &[(usize, Vec<f64>)] {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &[Example] {
        &self.labeled
    }

    pub fn holdout(&self) -> &[Example] {
        &self.holdout
    }

    /// Ground-truth target of an unlabeled item (used for metrics, never for training).
    pub fn hidden_target(&self, id: usize) -> Option<f64> {
        self.hidden_targets.get(&id).copied()
    }

    /// Moves `ids` from the unlabeled pool to the labeled set, in the given order.
    pub fn label(&mut self, ids: &[usize]) -> Result<()> {
        let wanted: BTreeSet<usize> = ids.iter().copied().collect();
        if wanted.len() != ids.len() {
            return Err(Error::Config("acquired ids contain duplicates".into()));
        }
        let mut moved: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        self.unlabeled.retain(|(id, x)| {
            if wanted.contains(id) {
                moved.insert(*id, x.clone());
                false
            } else {
                true
            }
        });
        if moved.len() != ids.len() {
            return Err(Error::Config(
                "acquired id not found in the unlabeled pool".into(),
            ));
        }
        for id in ids {
            let x = moved.remove(id).expect("checked above");
            let y = self
                .hidden_targets
                .remove(id)
                .expect("unlabeled items carry a target");
            self.labeled.push(Example { id: *id, x, y });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    HingeLl,
    Llpp,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::HingeLl => "hinge_ll",
            Strategy::Llpp => "llpp",
        }
    }

    /// Loss-head objective used while training a model for this strategy.
    pub fn objective(&self, xi: f64) -> Result<Option<Objective>> {
        Ok(match self {
            Strategy::Random => None,
            Strategy::HingeLl => Some(Objective::Hinge(HingeConfig::new(xi)?)),
            Strategy::Llpp => Some(Objective::Kl),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "hinge_ll" => Ok(Strategy::HingeLl),
            "llpp" => Ok(Strategy::Llpp),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step: f64,
    pub loss_head_lr: f64,
    /// Weight of the ranking loss relative to the task loss.
    pub rank_weight: f64,
    /// Scale on the loss head's gradient into the trunk (0 stops it).
    pub lambda: f64,
    pub xi: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 500,
            batch_size: 32,
            step: 0.05,
            loss_head_lr: 0.05,
            rank_weight: 1.0,
            lambda: 0.0,
            xi: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("train.hidden must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be >= 2".into()));
        }
        for (name, v) in [
            ("train.step", self.step),
            ("train.loss_head_lr", self.loss_head_lr),
            ("train.rank_weight", self.rank_weight),
            ("train.xi", self.xi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "train.lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Gradient of the training objective, shaped like [`TwoHeadModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
    pub loss_head: Option<Vec<f64>>,
}

impl ModelGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.w1);
        out.extend(&self.b1);
        out.extend(&self.v);
        out.push(self.c);
        if let Some(u) = &self.loss_head {
            out.extend(u);
        }
        out
    }
}

/// Tanh trunk with a linear predictor head and an optional linear loss head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHeadModel {
    input_dim: usize,
    hidden: usize,
    /// Row-major `hidden × input_dim`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    v: Vec<f64>,
    c: f64,
    loss_head: Option<Vec<f64>>,
    lambda: f64,
}

impl TwoHeadModel {
    /// Trunk weights draw from one stream and the loss head from another,
    /// so adding or dropping the loss head leaves the rest unchanged.
    pub fn new(
        input_dim: usize,
        hidden: usize,
        with_loss_head: bool,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        let mut rng = rng_for(seed, 0, STREAM_INIT_TRUNK);
        let in_scale = 3.0 / (input_dim as f64).sqrt();
        let out_scale = 1.0 / (hidden as f64).sqrt();
        let w1 = (0..hidden * input_dim)
            .map(|_| rng.random_range(-in_scale..in_scale))
            .collect();
        let b1 = (0..hidden).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Zero output weights: an untrained predictor outputs 0 everywhere.
        let v = vec![0.0; hidden];
        let loss_head = with_loss_head.then(|| {
            let mut rng = rng_for(seed, 0, STREAM_INIT_LOSS_HEAD);
            (0..hidden)
                .map(|_| 0.1 * rng.random_range(-out_scale..out_scale))
                .collect()
        });
        Ok(Self {
            input_dim,
            hidden,
            w1,
            b1,
            v,
            c: 0.0,
            loss_head,
            lambda,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn has_loss_head(&self) -> bool {
        self.loss_head.is_some()
    }

    /// Trunk and predictor parameters, flattened (`w1`, `b1`, `v`, `c`).
    pub fn trunk_parameters(&self) -> Vec<f64> {
        let mut out = self.w1.clone();
        out.extend(&self.b1);
        out.extend(&self.v);
        out.push(self.c);
        out
    }

    /// All parameters in the order used by [`ModelGradient::flatten`].
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = self.trunk_parameters();
        if let Some(u) = &self.loss_head {
            out.extend(u);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameters().len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.parameters().len(),
                params.len()
            )));
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden);
        let (v, rest) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.v.copy_from_slice(v);
        self.c = rest[0];
        if let Some(u) = &mut self.loss_head {
            u.copy_from_slice(&rest[1..]);
        }
        Ok(())
    }

    /// Penultimate features `θ = tanh(W₁x + b₁)`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                let pre: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.b1[h];
                pre.tanh()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_from_features(&self.features(x))
    }

    fn predict_from_features(&self, theta: &[f64]) -> f64 {
        self.v.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + self.c
    }

    /// Predicted loss `l̂ = uᵀθ`, or `None` without a loss head.
    pub fn predict_loss(&self, x: &[f64]) -> Option<f64> {
        let u = self.loss_head.as_ref()?;
        Some(u.iter().zip(self.features(x)).map(|(a, b)| a * b).sum())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// A minibatch with its true losses and pairing fixed, for gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Treated as constants by the ranking objective.
    pub true_losses: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl FrozenBatch {
    /// Snapshots the model's current squared errors as the true losses.
    pub fn new(
        model: &TwoHeadModel,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(
                "inputs and targets differ in length".into(),
            ));
        }
        for x in &inputs {
            model.check_input(x)?;
        }
        if pairs
            .iter()
            .any(|&(i, j)| i >= inputs.len() || j >= inputs.len())
        {
            return Err(Error::Dimension("pair index out of range".into()));
        }
        let true_losses = inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| (model.predict(x) - y).powi(2))
            .collect();
        Ok(Self {
            inputs,
            targets,
            true_losses,
            pairs,
        })
    }
}

fn build_pair(batch: &FrozenBatch, thetas: &[Vec<f64>], u: &[f64], i: usize, j: usize) -> RankPair {
    RankPair {
        l_i: batch.true_losses[i],
        l_j: batch.true_losses[j],
        theta_i: thetas[i].clone(),
        theta_j: thetas[j].clone(),
        w: u.to_vec(),
    }
}

/// Mean squared error over the batch plus `rank_weight` times the mean pair loss.
pub fn batch_objective(
    model: &TwoHeadModel,
    batch: &FrozenBatch,
    objective: Option<&Objective>,
    rank_weight: f64,
) -> Result<(f64, f64)> {
    let thetas: Vec<Vec<f64>> = batch.inputs.iter().map(|x| model.features(x)).collect();
    let n = batch.inputs.len() as f64;
    let task = thetas
        .iter()
        .zip(&batch.targets)
        .map(|(t, y)| (model.predict_from_features(t) - y).powi(2))
        .sum::<f64>()
        / n;
    let rank = match (objective, &model.loss_head) {
        (Some(obj), Some(u)) if !batch.pairs.is_empty() => {
            let mut total = 0.0;
            for &(i, j) in &batch.pairs {
                total += objective_loss(&build_pair(batch, &thetas, u, i, j), obj)?;
            }
            total / batch.pairs.len() as f64
        }
        _ => 0.0,
    };
    Ok((task + rank_weight * rank, rank))
}

/// Gradient of [`batch_objective`], with the ranking term's flow into the trunk
/// scaled by the model's λ. At λ = 1 this is the exact gradient.
pub fn batch_gradient(
    model: &TwoHeadModel,
    batch: &FrozenBatch,
    objective: Option<&Objective>,
    rank_weight: f64,
) -> Result<ModelGradient> {
    let h = model.hidden;
    let d = model.input_dim;
    let n = batch.inputs.len() as f64;
    let thetas: Vec<Vec<f64>> = batch.inputs.iter().map(|x| model.features(x)).collect();
    let mut g = ModelGradient {
        w1: vec![0.0; h * d],
        b1: vec![0.0; h],
        v: vec![0.0; h],
        c: 0.0,
        loss_head: model.loss_head.as_ref().map(|_| vec![0.0; h]),
    };
    // dJ/dθ per example, accumulated from both heads.
    let mut d_theta = vec![vec![0.0; h]; thetas.len()];
    for (idx, (theta, y)) in thetas.iter().zip(&batch.targets).enumerate() {
        let r = 2.0 * (model.predict_from_features(theta) - y) / n;
        for k in 0..h {
            g.v[k] += r * theta[k];
            d_theta[idx][k] += r * model.v[k];
        }
        g.c += r;
    }
    if let (Some(obj), Some(u), Some(gu)) = (objective, &model.loss_head, g.loss_head.as_mut()) {
        if !batch.pairs.is_empty() {
            let scale = rank_weight / batch.pairs.len() as f64;
            let back = scale * model.lambda;
            for &(i, j) in &batch.pairs {
                let rg = objective_gradient(&build_pair(batch, &thetas, u, i, j), obj)?;
                for (acc, gw) in gu.iter_mut().zip(&rg.grad_w) {
                    *acc += scale * gw;
                }
                // Skipped entirely at λ = 0 so the trunk update is bit-for-bit the task-only one.
                if back != 0.0 {
                    for (acc, gt) in d_theta[i].iter_mut().zip(&rg.grad_theta_i) {
                        *acc += back * gt;
                    }
                    for (acc, gt) in d_theta[j].iter_mut().zip(&rg.grad_theta_j) {
                        *acc += back * gt;
                    }
                }
            }
        }
    }
    for ((theta, dt), x) in thetas.iter().zip(&d_theta).zip(&batch.inputs) {
        for k in 0..h {
            let dpre = dt[k] * (1.0 - theta[k] * theta[k]);
            g.b1[k] += dpre;
            for (m, xm) in x.iter().enumerate() {
                g.w1[k * d + m] += dpre * xm;
            }
        }
    }
    Ok(g)
}

fn apply(model: &mut TwoHeadModel, g: &ModelGradient, step: f64, head_lr: f64) {
    for (p, d) in model.w1.iter_mut().zip(&g.w1) {
        *p -= step * d;
    }
    for (p, d) in model.b1.iter_mut().zip(&g.b1) {
        *p -= step * d;
    }
    for (p, d) in model.v.iter_mut().zip(&g.v) {
        *p -= step * d;
    }
    model.c -= step * g.c;
    if let (Some(u), Some(gu)) = (model.loss_head.as_mut(), g.loss_head.as_ref()) {
        for (p, d) in u.iter_mut().zip(gu) {
            *p -= head_lr * d;
        }
    }
}

/// Per-epoch means of the task loss and of the ranking loss over the epoch's minibatches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub task_loss: Vec<f64>,
    pub rank_loss: Vec<f64>,
}

/// Trains in place on the labeled set with minibatch gradient descent.
///
/// Each minibatch is shuffled from the labeled set, then permuted again and split
/// into disjoint adjacent pairs for the ranking objective. True losses are the
/// predictor's squared errors at the weights current at that step.
pub fn train_cycle(
    model: &mut TwoHeadModel,
    pool: &Pool,
    objective: Option<&Objective>,
    cfg: &TrainConfig,
    seed: u64,
    cycle: usize,
) -> Result<TrainLog> {
    cfg.validate()?;
    if pool.labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if objective.is_some() && !model.has_loss_head() {
        return Err(Error::Config(
            "a ranking objective needs a model with a loss head".into(),
        ));
    }
    for e in &pool.labeled {
        model.check_input(&e.x)?;
    }
    let mut shuffle_rng = rng_for(seed, cycle, STREAM_SHUFFLE);
    let mut pair_rng = rng_for(seed, cycle, STREAM_PAIRING);
    let mut order: Vec<usize> = (0..pool.labeled.len()).collect();
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut task_sum = 0.0;
        let mut rank_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| pool.labeled[i].x.clone()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| pool.labeled[i].y).collect();
            let pairs = match objective {
                Some(_) => {
                    let mut perm: Vec<usize> = (0..chunk.len()).collect();
                    perm.shuffle(&mut pair_rng);
                    perm.chunks_exact(2).map(|p| (p[0], p[1])).collect()
                }
                None => Vec::new(),
            };
            let batch = FrozenBatch::new(model, inputs, targets, pairs)?;
            let (total, rank) = batch_objective(model, &batch, objective, cfg.rank_weight)?;
            task_sum += total - cfg.rank_weight * rank;
            rank_sum += rank;
            batches += 1;
            let g = batch_gradient(model, &batch, objective, cfg.rank_weight)?;
            apply(model, &g, cfg.step, cfg.loss_head_lr);
        }
        log.task_loss.push(task_sum / batches as f64);
        log.rank_loss.push(rank_sum / batches as f64);
    }
    Ok(log)
}

/// Picks `batch` unlabeled ids: uniformly at random, or the largest predicted
/// losses with ties broken toward smaller ids.
pub fn acquire(
    model: &TwoHeadModel,
    pool: &Pool,
    strategy: Strategy,
    batch: usize,
    seed: u64,
    cycle: usize,
) -> Result<Vec<usize>> {
    let available = pool.unlabeled.len();
    if batch > available {
        return Err(Error::BatchSize { batch, available });
    }
    match strategy {
        Strategy::Random => {
            let mut rng = rng_for(seed, cycle, STREAM_ACQUIRE);
            Ok(index::sample(&mut rng, available, batch)
                .into_iter()
                .map(|i| pool.unlabeled[i].0)
                .collect())
        }
        Strategy::HingeLl | Strategy::Llpp => {
            let mut scored: Vec<(f64, usize)> = pool
                .unlabeled
                .iter()
                .map(|(id, x)| {
                    model.predict_loss(x).map(|l| (l, *id)).ok_or_else(|| {
                        Error::Config("loss-based acquisition needs a loss head".into())
                    })
                })
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok(scored.into_iter().take(batch).map(|(_, id)| id).collect())
        }
    }
}

/// Squared-error losses of the predictor over the labeled set.
pub fn loss_histogram(model: &TwoHeadModel, pool: &Pool) -> Vec<f64> {
    pool.labeled
        .iter()
        .map(|e| (model.predict(&e.x) - e.y).powi(2))
        .collect()
}

pub fn holdout_mse(model: &TwoHeadModel, pool: &Pool) -> f64 {
    if pool.holdout.is_empty() {
        return 0.0;
    }
    pool.holdout
        .iter()
        .map(|e| (model.predict(&e.x) - e.y).powi(2))
        .sum::<f64>()
        / pool.holdout.len() as f64
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Correlation between predicted and true loss over the unlabeled pool.
pub fn pool_loss_correlation(model: &TwoHeadModel, pool: &Pool) -> f64 {
    let mut predicted = Vec::with_capacity(pool.unlabeled.len());
    let mut truth = Vec::with_capacity(pool.unlabeled.len());
    for (id, x) in &pool.unlabeled {
        let (Some(l), Some(y)) = (model.predict_loss(x), pool.hidden_target(*id)) else {
            continue;
        };
        predicted.push(l);
        truth.push((model.predict(x) - y).powi(2));
    }
    pearson(&predicted, &truth)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub cycles: usize,
    pub init_labeled: usize,
    pub batch: usize,
    pub pool_size: usize,
    pub holdout_size: usize,
    pub strategies: Vec<Strategy>,
    pub task: ToyTask,
    pub train: TrainConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cycles: 5,
            init_labeled: 200,
            batch: 100,
            pool_size: 2000,
            holdout_size: 500,
            strategies: vec![Strategy::Random, Strategy::HingeLl, Strategy::Llpp],
            task: ToyTask::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        if self.init_labeled == 0 {
            return Err(Error::Config("init_labeled must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.init_labeled + self.cycles * self.batch > self.pool_size {
            return Err(Error::Config(format!(
                "pool_size = {} cannot supply init_labeled + cycles * batch = {}",
                self.pool_size,
                self.init_labeled + self.cycles * self.batch
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        let unique: BTreeSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return Err(Error::Config("strategies contain duplicates".into()));
        }
        Ok(())
    }
}

/// One row of the report.
///
/// Cycle 0 describes the base model: batch statistics are over the initial
/// labeled set. For cycle `c >= 1` the batch statistics and `pool_corr` come from
/// the model that made the acquisition (trained through cycle `c - 1`), measured
/// on the acquired items before they are labeled; `holdout_mse` is measured after
/// retraining on the enlarged labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub cycle: usize,
    pub strategy: Strategy,
    pub batch_mean_true_loss: f64,
    pub batch_std_true_loss: f64,
    pub holdout_mse: f64,
    pub pool_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub records: Vec<SimRecord>,
}

impl SimReport {
    pub fn get(&self, cycle: usize, strategy: Strategy) -> Option<&SimRecord> {
        self.records
            .iter()
            .find(|r| r.cycle == cycle && r.strategy == strategy)
    }
}

/// Final state of one strategy's run, for inspection after the report.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub model: TwoHeadModel,
    pub pool: Pool,
    pub records: Vec<SimRecord>,
}

pub fn run_strategy(config: &SimConfig, strategy: Strategy) -> Result<StrategyRun> {
    config.validate()?;
    let seed = config.seed;
    let mut pool = Pool::generate(
        &config.task,
        config.pool_size,
        config.init_labeled,
        config.holdout_size,
        seed,
    )?;
    let mut model = TwoHeadModel::new(
        config.task.input_dim,
        config.train.hidden,
        true,
        config.train.lambda,
        seed,
    )?;
    let objective = strategy.objective(config.train.xi)?;
    train_cycle(
        &mut model,
        &pool,
        objective.as_ref(),
        &config.train,
        seed,
        0,
    )?;

    let (m, s) = mean_std(&loss_histogram(&model, &pool));
    let mut records = vec![SimRecord {
        cycle: 0,
        strategy,
        batch_mean_true_loss: m,
        batch_std_true_loss: s,
        holdout_mse: holdout_mse(&model, &pool),
        pool_corr: pool_loss_correlation(&model, &pool),
    }];
    for cycle in 1..=config.cycles {
        let pool_corr = pool_loss_correlation(&model, &pool);
        let ids = acquire(&model, &pool, strategy, config.batch, seed, cycle)?;
        let losses: Vec<f64> = ids
            .iter()
            .map(|id| {
                let x = &pool
                    .unlabeled
                    .iter()
                    .find(|(i, _)| i == id)
                    .expect("acquired from pool")
                    .1;
                let y = pool.hidden_target(*id).expect("unlabeled target");
                (model.predict(x) - y).powi(2)
            })
            .collect();
        let (m, s) = mean_std(&losses);
        pool.label(&ids)?;
        train_cycle(
            &mut model,
            &pool,
            objective.as_ref(),
            &config.train,
            seed,
            cycle,
        )?;
        records.push(SimRecord {
            cycle,
            strategy,
            batch_mean_true_loss: m,
            batch_std_true_loss: s,
            holdout_mse: holdout_mse(&model, &pool),
            pool_corr,
        });
    }
    Ok(StrategyRun {
        strategy,
        model,
        pool,
        records,
    })
}

/// Runs every strategy from the same initial split and model initialisation.
/// Strategies run in parallel; records are ordered by cycle, then by the
/// configured strategy order.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let runs: Vec<StrategyRun> = config
        .strategies
        .par_iter()
        .map(|&s| run_strategy(config, s))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for cycle in 0..=config.cycles {
        for run in &runs {
            records.push(run.records[cycle].clone());
        }
    }
    Ok(SimReport { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SimConfig {
        SimConfig {
            seed: 3,
            cycles: 2,
            init_labeled: 40,
            batch: 10,
            pool_size: 120,
            holdout_size: 30,
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn pool_generation_and_labeling() {
        let mut pool = Pool::generate(&ToyTask::default(), 50, 10, 5, 1).unwrap();
        assert_eq!(pool.labeled().len(), 10);
        assert_eq!(pool.unlabeled().len(), 40);
        let ids: Vec<usize> = pool.unlabeled()[..3].iter().map(|(i, _)| *i).collect();
        let target = pool.hidden_target(ids[0]).unwrap();
        pool.label(&ids).unwrap();
        assert_eq!(pool.labeled().len(), 13);
        assert_eq!(pool.labeled()[10].y, target);
        assert!(pool.label(&ids).is_err());
        assert!(pool.hidden_target(ids[0]).is_none());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Random, Strategy::HingeLl, Strategy::Llpp] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("entropy".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.batch = 1000;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny_config();
        c.train.lambda = 1.5;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.strategies = vec![Strategy::Llpp, Strategy::Llpp];
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_shape() {
        let report = run_simulation(&tiny_config()).unwrap();
        assert_eq!(report.records.len(), 3 * 3);
        assert!(report
            .records
            .iter()
            .all(|r| r.batch_mean_true_loss.is_finite()
                && r.batch_std_true_loss.is_finite()
                && r.holdout_mse.is_finite()
                && r.pool_corr.is_finite()));
    }

    #[test]
    fn pearson_edges() {
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }
}
