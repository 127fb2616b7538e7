//! Seeded, sharded random streams shared by the Monte Carlo oracles.
//!
//! A run is split into a fixed number of shards. Shard `s` draws from the
//! ChaCha8 stream `s` under the caller's seed, so results depend only on
//! `(seed, shard count)` and not on how rayon schedules the shards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MC_SHARDS: u64 = 16;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Number of draws (or accepted draws, for rejection estimators) behind `value`.
    pub count: u64,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Erlang draw as a sum of `k` unit exponentials scaled by `theta`.
pub(crate) fn erlang_draw<R: Rng + ?Sized>(rng: &mut R, k: u32, theta: f64) -> f64 {
    let mut s = 0.0;
    for _ in 0..k {
        s += rng.sample::<f64, _>(Exp1);
    }
    s * theta
}

/// Runs `work(rng, n)` on each shard in parallel and returns the per-shard
/// results in shard order.
pub(crate) fn sharded<T, F>(samples: u64, seed: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let base = samples / MC_SHARDS;
    let extra = samples % MC_SHARDS;
    (0..MC_SHARDS)
        .into_par_iter()
        .map(|s| {
            let n = base + u64::from(s < extra);
            let mut rng = stream_rng(seed, s);
            work(&mut rng, n)
        })
        .collect()
}
