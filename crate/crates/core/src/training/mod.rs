//! Losses, Adam, and the meta-training and evaluation loops.

mod adam;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{gaussian_nll_diag, gaussian_nll_full, prediction_nll, HALF_LN_2PI};

use std::fmt::Write as _;

use lbanp_tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NpError, Result};
use crate::models::{ModelConfig, NeuralProcess};
use crate::tasks::{TaskBatch, TaskSource};

/// Offset separating the evaluation task stream from the training stream.
const EVAL_STREAM: u64 = 0x5eed_e7a1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    /// Linear ramp of the learning rate over the first steps.
    pub warmup_steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_tasks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            adam: AdamConfig::default(),
            warmup_steps: 0,
            seed: 0,
            eval_every: 1000,
            eval_tasks: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(NpError::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        if self.eval_every == 0 || self.eval_tasks == 0 {
            return Err(NpError::Config("eval_every and eval_tasks must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.adam.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.adam.lr
        }
    }
}

/// `(step, eval mean loglik)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,eval_loglik\n");
        for (step, ll) in &self.points {
            let _ = writeln!(s, "{step},{ll}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("step,eval_loglik") {
            return Err(NpError::Contract("learning curve header must be step,eval_loglik".into()));
        }
        let mut points = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parsed = line
                .split_once(',')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
            points.push(parsed.ok_or_else(|| NpError::Contract(format!("bad curve row {line:?}")))?);
        }
        Ok(LearningCurve { points })
    }
}

pub struct TrainedModel {
    pub model: NeuralProcess,
    pub curve: LearningCurve,
}

/// NLL of one batch on a fresh graph, with gradients for every parameter.
pub fn loss_and_grads(model: &NeuralProcess, batch: &TaskBatch) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let pred = model.predict(&mut g, &p, batch)?;
    let y = g.input(batch.y_t.clone());
    let loss = prediction_nll(&mut g, &pred, y)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let grads = p
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok((value, grads))
}

/// Mean per-point log-likelihood of a batch (gradient-free).
pub fn batch_loglik(model: &NeuralProcess, batch: &TaskBatch) -> Result<f64> {
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let pred = model.predict(&mut g, &p, batch)?;
    let y = g.input(batch.y_t.clone());
    let loss = prediction_nll(&mut g, &pred, y)?;
    Ok(-g.value(loss).data()[0])
}

/// Exactly `n_tasks` tasks drawn batch by batch from `source`.
pub fn sample_eval_tasks(source: &TaskSource, n_tasks: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TaskBatch>> {
    let mut out = Vec::new();
    let mut remaining = n_tasks;
    while remaining > 0 {
        let batch = source.sample(rng)?;
        let k = batch.batch_size().min(remaining);
        out.push(if k == batch.batch_size() { batch } else { batch.take_tasks(k)? });
        remaining -= k;
    }
    Ok(out)
}

/// Task-weighted mean per-point log-likelihood over pre-drawn batches.
pub fn mean_loglik(model: &NeuralProcess, batches: &[TaskBatch]) -> Result<f64> {
    let mut total = 0.0;
    let mut tasks = 0usize;
    for b in batches {
        let ll = batch_loglik(model, b)?;
        total += ll * b.batch_size() as f64;
        tasks += b.batch_size();
    }
    Ok(total / tasks as f64)
}

/// Train a fresh model initialized from `config.seed`.
pub fn train(model_config: &ModelConfig, source: &TaskSource, config: &TrainConfig) -> Result<TrainedModel> {
    let mut model = NeuralProcess::new(model_config.clone(), config.seed)?;
    let curve = train_model(&mut model, source, config)?;
    Ok(TrainedModel { model, curve })
}

/// Train `model` in place. The curve is evaluated at step 0, every
/// `eval_every` steps and at the final step, always on the same held-out
/// tasks.
pub fn train_model(model: &mut NeuralProcess, source: &TaskSource, config: &TrainConfig) -> Result<LearningCurve> {
    config.validate()?;
    let mut curve = LearningCurve::default();
    if config.steps == 0 {
        return Ok(curve);
    }
    let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_STREAM);
    let eval_set = sample_eval_tasks(source, config.eval_tasks, &mut eval_rng)?;
    let mut state = AdamState::new(model.params());
    curve.points.push((0, mean_loglik(model, &eval_set).map_err(|e| at_step(e, 0))?));
    for step in 0..config.steps {
        let batch = source.sample(&mut train_rng)?;
        let (loss, grads) = loss_and_grads(model, &batch).map_err(|e| at_step(e, step))?;
        if !loss.is_finite() {
            return Err(NpError::Numeric(format!("non-finite loss {loss} at step {step}")));
        }
        adam_step(model.params_mut(), &grads, &mut state, &config.adam, config.lr_at(step))?;
        let done = step + 1;
        if done % config.eval_every == 0 || done == config.steps {
            let ll = mean_loglik(model, &eval_set).map_err(|e| at_step(e, done))?;
            if !ll.is_finite() {
                return Err(NpError::Numeric(format!("non-finite eval loglik {ll} at step {done}")));
            }
            curve.points.push((done, ll));
        }
    }
    Ok(curve)
}

fn at_step(e: NpError, step: usize) -> NpError {
    if e.is_numeric() {
        NpError::Numeric(format!("step {step}: {e}"))
    } else {
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_loglik: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std_over_seeds: f64,
    pub n_seeds: usize,
}

impl EvalResult {
    pub fn from_seed_means(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(NpError::Contract("evaluation needs at least one seed".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(EvalResult {
            mean_loglik: mean,
            std_over_seeds: std,
            n_seeds: values.len(),
        })
    }
}

/// Per seed `base_seed + s`, the mean log-likelihood over `eval_tasks`
/// fresh tasks; summarized across seeds.
pub fn evaluate(
    model: &NeuralProcess,
    source: &TaskSource,
    n_seeds: usize,
    eval_tasks: usize,
    base_seed: u64,
) -> Result<EvalResult> {
    if n_seeds == 0 || eval_tasks == 0 {
        return Err(NpError::Contract("evaluation needs at least one seed and one task".into()));
    }
    let mut per_seed = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s));
        let tasks = sample_eval_tasks(source, eval_tasks, &mut rng)?;
        per_seed.push(mean_loglik(model, &tasks)?);
    }
    EvalResult::from_seed_means(&per_seed)
}

/// Finite-difference check of the NLL gradient of every parameter of
/// `model` on `batch`.
pub fn model_grad_check(
    model: &NeuralProcess,
    batch: &TaskBatch,
    opts: &lbanp_tensor::GradCheckOptions,
) -> Result<lbanp_tensor::GradCheckReport> {
    let report = lbanp_tensor::grad_check(
        model.params().tensors(),
        |g, vars| {
            let p = crate::params::ParamStore::bind_vars(vars.to_vec());
            let pred = model
                .predict(g, &p, batch)
                .map_err(|e| lbanp_tensor::TensorError::Contract(e.to_string()))?;
            let y = g.input(batch.y_t.clone());
            prediction_nll(g, &pred, y).map_err(|e| lbanp_tensor::TensorError::Contract(e.to_string()))
        },
        opts,
    )?;
    Ok(report)
}
