//! UCB play on the wheel bandit with a neural process as the reward model.

use std::fmt::Write as _;

use lbanp_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, NpError, Result};
use crate::models::{GaussianPrediction, NeuralProcess};
use crate::tasks::wheel::{check_delta, sample_disk, wheel_means, wheel_rewards, WheelConfig, N_ARMS};

/// Separates the policy's random stream from the environment's.
const POLICY_STREAM: u64 = 0xa11c_e5ed;

/// Arm with the largest `mean + c·std`; ties go to the lowest index.
pub fn ucb_select(mean: &[f64], std: &[f64], c: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, (&m, &s)) in mean.iter().zip(std).enumerate() {
        let score = m + c * s;
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    best
}

/// Observed `(x, rewards)` pairs so far, flat row-major.
#[derive(Clone, Debug, Default)]
pub struct History {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl History {
    pub fn len(&self) -> usize {
        self.xs.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

pub trait ArmPolicy {
    fn select(&mut self, history: &History, x: [f64; 2], rng: &mut ChaCha8Rng) -> Result<usize>;
}

/// Uniformly random arm.
pub struct UniformPolicy;

impl ArmPolicy for UniformPolicy {
    fn select(&mut self, _: &History, _: [f64; 2], rng: &mut ChaCha8Rng) -> Result<usize> {
        Ok(rng.random_range(0..N_ARMS))
    }
}

/// Knows the true expected rewards.
pub struct OraclePolicy {
    pub delta: f64,
    pub wheel: WheelConfig,
}

impl ArmPolicy for OraclePolicy {
    fn select(&mut self, _: &History, x: [f64; 2], _: &mut ChaCha8Rng) -> Result<usize> {
        let (means, _) = wheel_means(x, self.delta, &self.wheel)?;
        Ok(ucb_select(&means, &[0.0; N_ARMS], 0.0))
    }
}

/// UCB over a model conditioned afresh on the whole history every step.
/// With an empty history the arm is drawn uniformly.
pub struct ModelPolicy<'a> {
    pub model: &'a NeuralProcess,
    pub c: f64,
}

/// Predictive mean and marginal std of every arm at one point.
pub fn arm_posterior(model: &NeuralProcess, history: &History, x: [f64; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = history.len();
    let x_c = Tensor::new([1, n, 2], history.xs.clone())?;
    let y_c = Tensor::new([1, n, N_ARMS], history.ys.clone())?;
    let x_t = Tensor::new([1, 1, 2], x.to_vec())?;
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let state = model.condition_on(&mut g, &p, &x_c, &y_c)?;
    let pred = model.query_from(&mut g, &p, &state, &x_t)?.values(&g);
    Ok(match pred {
        GaussianPrediction::Diag(d) => (d.mean.into_data(), d.std.into_data()),
        GaussianPrediction::Full(f) => {
            let d = f.mean.shape()[1];
            let cov = f.covariance(0);
            let std = (0..d).map(|i| cov[i * d + i].sqrt()).collect();
            (f.mean.into_data(), std)
        }
    })
}

impl ArmPolicy for ModelPolicy<'_> {
    fn select(&mut self, history: &History, x: [f64; 2], rng: &mut ChaCha8Rng) -> Result<usize> {
        if history.is_empty() {
            return Ok(rng.random_range(0..N_ARMS));
        }
        let (mean, std) = arm_posterior(self.model, history, x)?;
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(NpError::Numeric(format!(
                "non-finite prediction after {} observations",
                history.len()
            )));
        }
        Ok(ucb_select(&mean, &std, self.c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditRun {
    pub delta: f64,
    pub seed: u64,
    pub steps: usize,
    pub regret_trajectory: Vec<f64>,
    pub cumulative_regret: f64,
}

/// Play `steps` rounds. Contexts and rewards come from a stream seeded by
/// `seed`, so every policy faces the same points for the same seed.
pub fn run_wheel_episode(
    policy: &mut dyn ArmPolicy,
    delta: f64,
    steps: usize,
    wheel: &WheelConfig,
    seed: u64,
) -> Result<BanditRun> {
    check_delta(delta)?;
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed ^ POLICY_STREAM);
    let mut history = History::default();
    let mut trajectory = Vec::with_capacity(steps);
    for step in 0..steps {
        let x = sample_disk(&mut env);
        let (rewards, best) = wheel_rewards(x, delta, wheel, &mut env)?;
        let arm = policy
            .select(&history, x, &mut policy_rng)
            .map_err(|e| {
                if e.is_numeric() {
                    NpError::Numeric(format!("step {step}: {e}"))
                } else {
                    e
                }
            })?;
        if arm >= N_ARMS {
            return contract(format!("policy chose arm {arm} of {N_ARMS}"));
        }
        let (means, _) = wheel_means(x, delta, wheel)?;
        trajectory.push(means[best] - means[arm]);
        history.xs.extend_from_slice(&x);
        history.ys.extend_from_slice(&rewards);
    }
    let cumulative_regret = trajectory.iter().sum();
    Ok(BanditRun {
        delta,
        seed,
        steps,
        regret_trajectory: trajectory,
        cumulative_regret,
    })
}

/// `100 · mean(model regret) / mean(uniform regret)`.
pub fn normalized_regret(runs: &[BanditRun], uniform_runs: &[BanditRun]) -> Result<f64> {
    if runs.is_empty() || uniform_runs.is_empty() {
        return contract("normalized regret needs runs of both policies");
    }
    let mean = |r: &[BanditRun]| r.iter().map(|r| r.cumulative_regret).sum::<f64>() / r.len() as f64;
    let base = mean(uniform_runs);
    if base == 0.0 {
        return contract("uniform policy has zero mean regret");
    }
    Ok(100.0 * mean(runs) / base)
}

pub const BANDIT_CSV_HEADER: &str = "delta,seed,cumulative_regret,normalized_regret";

/// One row per run; each run's regret is normalized by the uniform mean.
pub fn bandit_csv_rows(runs: &[BanditRun], uniform_runs: &[BanditRun]) -> Result<String> {
    let mut s = String::new();
    for r in runs {
        let norm = normalized_regret(std::slice::from_ref(r), uniform_runs)?;
        let _ = writeln!(s, "{},{},{},{}", r.delta, r.seed, r.cumulative_regret, norm);
    }
    Ok(s)
}
