//! The wheel contextual bandit: five arms over the unit disk.

use lbanp_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, NpError, Result};

use super::batch::TaskBatch;

pub const N_ARMS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WheelConfig {
    /// Fixed radius of the low-reward core; `None` draws one per task from `U(0, 1)`.
    pub delta: Option<f64>,
    pub mu_arm1: f64,
    pub mu_other: f64,
    pub mu_optimal: f64,
    /// Standard deviation of every reward.
    pub reward_sigma: f64,
    pub context_n: usize,
    pub eval_m: usize,
    pub batch: usize,
}

impl Default for WheelConfig {
    fn default() -> Self {
        WheelConfig {
            delta: None,
            mu_arm1: 1.2,
            mu_other: 1.0,
            mu_optimal: 50.0,
            reward_sigma: 0.012,
            context_n: 512,
            eval_m: 50,
            batch: 8,
        }
    }
}

impl WheelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            check_delta(d)?;
        }
        if !(self.reward_sigma >= 0.0) || self.context_n == 0 || self.eval_m == 0 || self.batch == 0 {
            return Err(NpError::Config("wheel sizes must be positive and sigma non-negative".into()));
        }
        Ok(())
    }
}

pub fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(NpError::Config(format!("delta {delta} outside (0, 1)")))
    }
}

/// High-reward arm of a point outside the core: arms 1..=4 for the
/// quadrants (+,+), (−,+), (−,−), (+,−).
fn quadrant_arm(x: [f64; 2]) -> usize {
    match (x[0] >= 0.0, x[1] >= 0.0) {
        (true, true) => 1,
        (false, true) => 2,
        (false, false) => 3,
        (true, false) => 4,
    }
}

fn norm(x: [f64; 2]) -> f64 {
    x[0].hypot(x[1])
}

/// Expected reward of every arm at `x` and the optimal arm.
pub fn wheel_means(x: [f64; 2], delta: f64, config: &WheelConfig) -> Result<([f64; N_ARMS], usize)> {
    let r = norm(x);
    if !(r <= 1.0) {
        return contract(format!("point ({}, {}) lies outside the unit disk", x[0], x[1]));
    }
    let mut means = [config.mu_other; N_ARMS];
    means[0] = config.mu_arm1;
    if r < delta {
        return Ok((means, 0));
    }
    let arm = quadrant_arm(x);
    means[arm] = config.mu_optimal;
    Ok((means, arm))
}

/// Noisy rewards of all arms at `x` and the optimal arm.
pub fn wheel_rewards<R: Rng + ?Sized>(
    x: [f64; 2],
    delta: f64,
    config: &WheelConfig,
    rng: &mut R,
) -> Result<([f64; N_ARMS], usize)> {
    let (means, best) = wheel_means(x, delta, config)?;
    let noise = Normal::new(0.0, config.reward_sigma)
        .map_err(|e| NpError::Config(format!("reward sigma: {e}")))?;
    Ok((means.map(|m| m + noise.sample(rng)), best))
}

/// Uniform point on the unit disk by rejection from the square.
pub fn sample_disk<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    loop {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if norm(x) <= 1.0 {
            return x;
        }
    }
}

/// Batch of wheel problems, each with its own `δ`.
pub fn wheel_sample_batch<R: Rng + ?Sized>(config: &WheelConfig, rng: &mut R) -> Result<TaskBatch> {
    config.validate()?;
    let (b, n, m) = (config.batch, config.context_n, config.eval_m);
    let (mut xc, mut yc, mut xt, mut yt) = (
        Vec::with_capacity(b * n * 2),
        Vec::with_capacity(b * n * N_ARMS),
        Vec::with_capacity(b * m * 2),
        Vec::with_capacity(b * m * N_ARMS),
    );
    for _ in 0..b {
        let delta = match config.delta {
            Some(d) => d,
            None => loop {
                let d: f64 = rng.random();
                if d > 0.0 {
                    break d;
                }
            },
        };
        for i in 0..n + m {
            let x = sample_disk(rng);
            let (r, _) = wheel_rewards(x, delta, config, rng)?;
            let (xs, ys) = if i < n { (&mut xc, &mut yc) } else { (&mut xt, &mut yt) };
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&r);
        }
    }
    TaskBatch::new(
        Tensor::new([b, n, 2], xc)?,
        Tensor::new([b, n, N_ARMS], yc)?,
        Tensor::new([b, m, 2], xt)?,
        Tensor::new([b, m, N_ARMS], yt)?,
    )
}
