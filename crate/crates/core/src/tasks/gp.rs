//! Function-regression tasks drawn from a zero-mean GP prior, and the exact
//! posterior predictive used as a reference.

use lbanp_tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, NpError, Result};
use crate::linalg::{cholesky_jittered, lower_matvec, solve_lower, solve_lower_transpose};

use super::batch::TaskBatch;
use super::kernels::{kernel_matrix, KernelKind};

pub const SAMPLE_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpTaskConfig {
    pub kernel: KernelKind,
    /// Half-open `[lo, hi)` range for the lengthscale.
    pub l_range: (f64, f64),
    pub sigma_f_range: (f64, f64),
    /// Context size drawn uniformly from the integers in `[lo, hi)`.
    pub n_range: (usize, usize),
    /// Smallest target count; targets are drawn from `[min_target, max_points − N)`.
    pub min_target: usize,
    pub max_points: usize,
    pub x_range: (f64, f64),
    pub batch: usize,
}

impl Default for GpTaskConfig {
    fn default() -> Self {
        GpTaskConfig {
            kernel: KernelKind::Rbf,
            l_range: (0.6, 1.0),
            sigma_f_range: (0.1, 1.0),
            n_range: (3, 47),
            min_target: 3,
            max_points: 50,
            x_range: (-2.0, 2.0),
            batch: 16,
        }
    }
}

impl GpTaskConfig {
    pub fn with_kernel(kernel: KernelKind) -> Self {
        GpTaskConfig {
            kernel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l0, l1) = self.l_range;
        let (s0, s1) = self.sigma_f_range;
        let (n0, n1) = self.n_range;
        if !(l0 > 0.0 && l1 >= l0 && s0 > 0.0 && s1 >= s0) {
            return Err(NpError::Config("GP hyperparameter ranges must be positive".into()));
        }
        if n0 == 0 || n1 <= n0 || self.min_target == 0 || self.batch == 0 {
            return Err(NpError::Config("GP point counts must be positive".into()));
        }
        // the largest N must still leave room for min_target targets
        if (n1 - 1) + self.min_target >= self.max_points {
            return Err(NpError::Config(format!(
                "n_range {:?} leaves no room for {} targets under {} points",
                self.n_range, self.min_target, self.max_points
            )));
        }
        if !(self.x_range.1 > self.x_range.0) {
            return Err(NpError::Config("empty x_range".into()));
        }
        Ok(())
    }
}

/// Hyperparameters a task was drawn with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpHyper {
    pub l: f64,
    pub sigma_f: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draw `f(xs)` for one function of the prior.
pub fn sample_gp_function<R: Rng + ?Sized>(
    rng: &mut R,
    kernel: KernelKind,
    xs: &[f64],
    hyper: GpHyper,
) -> Result<Vec<f64>> {
    let n = xs.len();
    let k = kernel_matrix(kernel, xs, hyper.l, hyper.sigma_f)?;
    let (chol, _) = cholesky_jittered(&k, n, SAMPLE_JITTER, MAX_JITTER)?;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(lower_matvec(&chol, &z, n))
}

/// Draw a batch and report the per-task hyperparameters.
///
/// `N` and `M` are shared by all tasks of a batch; lengthscale, signal scale
/// and inputs are drawn per task.
pub fn sample_gp_tasks_with_hypers<R: Rng + ?Sized>(
    config: &GpTaskConfig,
    rng: &mut R,
) -> Result<(TaskBatch, Vec<GpHyper>)> {
    config.validate()?;
    let n = rng.random_range(config.n_range.0..config.n_range.1);
    let m = rng.random_range(config.min_target..config.max_points - n);
    let hypers: Vec<GpHyper> = (0..config.batch)
        .map(|_| GpHyper {
            l: uniform(rng, config.l_range),
            sigma_f: uniform(rng, config.sigma_f_range),
        })
        .collect();
    let batch = sample_gp_batch(rng, config.kernel, config.x_range, &hypers, n, m)?;
    Ok((batch, hypers))
}

pub fn sample_gp_tasks<R: Rng + ?Sized>(config: &GpTaskConfig, rng: &mut R) -> Result<TaskBatch> {
    Ok(sample_gp_tasks_with_hypers(config, rng)?.0)
}

/// One task per entry of `hypers`, each with `n` context and `m` target points.
pub fn sample_gp_batch<R: Rng + ?Sized>(
    rng: &mut R,
    kernel: KernelKind,
    x_range: (f64, f64),
    hypers: &[GpHyper],
    n: usize,
    m: usize,
) -> Result<TaskBatch> {
    if n == 0 || m == 0 || hypers.is_empty() {
        return contract("GP batch needs at least one task, context point and target");
    }
    let b = hypers.len();
    let (mut xc, mut yc, mut xt, mut yt) = (
        Vec::with_capacity(b * n),
        Vec::with_capacity(b * n),
        Vec::with_capacity(b * m),
        Vec::with_capacity(b * m),
    );
    for &hyper in hypers {
        let xs: Vec<f64> = (0..n + m).map(|_| uniform(rng, x_range)).collect();
        let ys = sample_gp_function(rng, kernel, &xs, hyper)?;
        xc.extend_from_slice(&xs[..n]);
        yc.extend_from_slice(&ys[..n]);
        xt.extend_from_slice(&xs[n..]);
        yt.extend_from_slice(&ys[n..]);
    }
    TaskBatch::new(
        Tensor::new([b, n, 1], xc)?,
        Tensor::new([b, n, 1], yc)?,
        Tensor::new([b, m, 1], xt)?,
        Tensor::new([b, m, 1], yt)?,
    )
}

/// Per-target posterior predictive mean and variance (observation noise included).
pub fn gp_posterior(
    x_c: &[f64],
    y_c: &[f64],
    x_t: &[f64],
    kernel: KernelKind,
    hyper: GpHyper,
    noise: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x_c.len();
    if n == 0 {
        return contract("GP posterior needs a nonempty context");
    }
    let mut k = kernel_matrix(kernel, x_c, hyper.l, hyper.sigma_f)?;
    for i in 0..n {
        k[i * n + i] += noise;
    }
    let chol = crate::linalg::cholesky(&k, n)
        .ok_or_else(|| NpError::Numeric("context kernel matrix is not positive definite".into()))?;
    let alpha = solve_lower_transpose(&chol, &solve_lower(&chol, y_c, n), n);
    let prior_var = hyper.sigma_f * hyper.sigma_f;
    let mut means = Vec::with_capacity(x_t.len());
    let mut vars = Vec::with_capacity(x_t.len());
    for &xs in x_t {
        let kstar: Vec<f64> = x_c
            .iter()
            .map(|&xc| kernel.of_distance((xs - xc).abs(), hyper.l, hyper.sigma_f))
            .collect();
        let mean: f64 = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&chol, &kstar, n);
        let reduction: f64 = v.iter().map(|x| x * x).sum();
        let var = (prior_var - reduction).max(0.0) + noise;
        means.push(mean);
        vars.push(var);
    }
    Ok((means, vars))
}

/// Mean over targets of the exact posterior predictive log density of a
/// single task (`B = 1`, scalar inputs and outputs).
pub fn gp_posterior_loglik(task: &TaskBatch, kernel: KernelKind, hyper: GpHyper, noise: f64) -> Result<f64> {
    if task.batch_size() != 1 || task.x_dim() != 1 || task.y_dim() != 1 {
        return contract("gp_posterior_loglik takes one task with scalar inputs and outputs");
    }
    let (means, vars) = gp_posterior(task.x_c.data(), task.y_c.data(), task.x_t.data(), kernel, hyper, noise)?;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let total: f64 = task
        .y_t
        .data()
        .iter()
        .zip(means.iter().zip(&vars))
        .map(|(&y, (&mu, &var))| -0.5 * (ln2pi + var.ln() + (y - mu) * (y - mu) / var))
        .sum();
    Ok(total / means.len() as f64)
}

/// Mean per-point oracle log-likelihood over every task of a batch.
pub fn gp_oracle_batch_loglik(batch: &TaskBatch, kernel: KernelKind, hypers: &[GpHyper], noise: f64) -> Result<f64> {
    if hypers.len() != batch.batch_size() {
        return contract("one hyperparameter set per task required");
    }
    let mut total = 0.0;
    for (i, &h) in hypers.iter().enumerate() {
        total += gp_posterior_loglik(&batch.task(i), kernel, h, noise)?;
    }
    Ok(total / hypers.len() as f64)
}
