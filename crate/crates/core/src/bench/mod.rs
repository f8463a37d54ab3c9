//! Analytic FLOP counts, wall-clock and workspace measurements, and
//! power-law fits of cost against context size.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use lbanp_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, NpError, Result};
use crate::models::{HeadKind, ModelConfig, NeuralProcess, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Embed the context and build the conditioned state.
    Condition,
    /// Embed the targets, run the decoder and the head.
    Query,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Condition => "condition",
            Phase::Query => "query",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = NpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "condition" => Ok(Phase::Condition),
            "query" => Ok(Phase::Query),
            other => Err(NpError::Config(format!("unknown phase '{other}'"))),
        }
    }
}

fn linear(rows: u64, d_in: u64, d_out: u64) -> u64 {
    2 * rows * d_in * d_out
}

fn mlp(rows: u64, widths: &[u64]) -> u64 {
    widths.windows(2).map(|w| linear(rows, w[0], w[1])).sum()
}

struct Dims {
    d: u64,
    h: u64,
    ff: u64,
}

impl Dims {
    fn mha(&self, nq: u64, nk: u64) -> u64 {
        let d = self.d;
        2 * linear(nq, d, d) + 2 * linear(nk, d, d) + 4 * nq * nk * d + 4 * self.h * nq * nk
    }

    fn block(&self, nq: u64, nk: u64) -> u64 {
        self.mha(nq, nk) + mlp(nq, &[self.d, self.ff, self.d])
    }
}

/// FLOPs of one task under `config`: 2 per multiply-add in every matrix
/// product, 4 per softmax element.
pub fn count_flops_for(config: &ModelConfig, phase: Phase, n: u64, m: u64) -> Result<u64> {
    config.validate()?;
    if n == 0 || m == 0 {
        return contract("FLOP counts need N, M >= 1");
    }
    let dims = Dims {
        d: config.d_model as u64,
        h: config.n_heads as u64,
        ff: config.d_ff as u64,
    };
    let d = dims.d;
    let (k, l) = (config.n_layers as u64, config.n_latents as u64);
    let token_in = (config.x_dim + config.y_dim + 1) as u64;
    let embed = |rows: u64| mlp(rows, &[token_in, d, d]);
    match phase {
        Phase::Condition => {
            let trunk = match config.variant {
                Variant::Cnp | Variant::TnpD => 0,
                Variant::Eqtnp => k * dims.block(n, n),
                Variant::Lbanp | Variant::LbanpL => k * (dims.block(l, n) + dims.block(l, l)),
            };
            Ok(embed(n) + trunk)
        }
        Phase::Query => {
            let trunk = match config.variant {
                Variant::Cnp => mlp(m, &[2 * d, d, d, d]),
                Variant::TnpD => k * dims.block(n + m, n + m),
                Variant::Eqtnp => k * dims.block(m, n),
                Variant::Lbanp => k * dims.block(m, l),
                Variant::LbanpL => dims.block(m, l),
            };
            Ok(embed(m) + trunk + head_flops(config, &dims, m))
        }
    }
}

fn head_flops(config: &ModelConfig, dims: &Dims, m: u64) -> u64 {
    let d = dims.d;
    let y = config.y_dim as u64;
    let f = config.nd_features as u64;
    let readout = mlp(m, &[d, d, d, y * (2 + f)]) + 2 * (m * y) * (m * y) * f;
    match config.head {
        HeadKind::Diag => mlp(m, &[d, d, d, 2 * y]),
        HeadKind::Nd => 2 * dims.block(m, m) + readout,
        HeadKind::End => {
            let q = config.n_nd_layers as u64;
            let nl = config.n_nd_latents as u64;
            q * (dims.block(nl, m) + dims.block(nl, nl)) + dims.block(m, nl) + readout
        }
    }
}

/// Bench configuration: diag head, 4 heads (fewer when `d` is small),
/// feed-forward width `2d`, scalar inputs and outputs.
pub fn bench_config(variant: Variant, l: usize, d: usize, k: usize) -> ModelConfig {
    let n_heads = if d % 4 == 0 { 4 } else { 1 };
    ModelConfig {
        variant,
        head: HeadKind::Diag,
        d_model: d,
        n_heads,
        d_ff: 2 * d,
        n_layers: k,
        n_latents: l.max(1),
        ..ModelConfig::default()
    }
}

pub fn count_flops(variant: Variant, phase: Phase, n: u64, m: u64, l: usize, d: usize, k: usize) -> Result<u64> {
    count_flops_for(&bench_config(variant, l, d, k), phase, n, m)
}

/// Random single-task inputs `(x_c, y_c, x_t)` for a model.
pub fn bench_inputs(config: &ModelConfig, n: usize, m: usize, seed: u64) -> Result<(Tensor, Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    Ok((
        Tensor::new([1, n, config.x_dim], draw(n * config.x_dim))?,
        Tensor::new([1, n, config.y_dim], draw(n * config.y_dim))?,
        Tensor::new([1, m, config.x_dim], draw(m * config.x_dim))?,
    ))
}

/// What one phase run cost on a gradient-free graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseCost {
    pub flops: u64,
    pub workspace_bytes: usize,
    /// Conditioned-state size per task (condition phase only).
    pub state_bytes: usize,
}

/// Run a phase once and read the graph's counters. Inputs and parameters
/// are bound before the counters are sampled.
pub fn run_phase(model: &NeuralProcess, phase: Phase, x_c: &Tensor, y_c: &Tensor, x_t: &Tensor) -> Result<PhaseCost> {
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let xc = g.input(x_c.clone());
    let yc = g.input(y_c.clone());
    let xt = g.input(x_t.clone());
    let (f0, w0) = (g.flops(), g.workspace_bytes());
    let tokens = model.embed_context(&mut g, &p, xc, yc)?;
    let state = model.condition(&mut g, &p, tokens)?;
    let (f1, w1) = (g.flops(), g.workspace_bytes());
    let state_bytes = state.bytes_per_task(&g);
    if phase == Phase::Condition {
        return Ok(PhaseCost {
            flops: f1 - f0,
            workspace_bytes: w1 - w0,
            state_bytes,
        });
    }
    let q = model.embed_query(&mut g, &p, xt)?;
    let emb = model.query(&mut g, &p, &state, q)?;
    model.predict_head(&mut g, &p, emb)?;
    Ok(PhaseCost {
        flops: g.flops() - f1,
        workspace_bytes: g.workspace_bytes() - w1,
        state_bytes,
    })
}

/// Peak transient bytes of a phase (graph workspace, parameters excluded).
pub fn measure_peak_bytes(model: &NeuralProcess, phase: Phase, n: usize, m: usize) -> Result<usize> {
    let (x_c, y_c, x_t) = bench_inputs(model.config(), n, m, 0)?;
    Ok(run_phase(model, phase, &x_c, &y_c, &x_t)?.workspace_bytes)
}

pub const MIN_REPS: usize = 5;

/// Median wall-clock seconds of a phase over `reps` timed runs after one
/// warmup. Query timings exclude conditioning.
pub fn measure_wallclock_samples(model: &NeuralProcess, phase: Phase, n: usize, m: usize, reps: usize) -> Result<Vec<f64>> {
    if reps < MIN_REPS {
        return contract(format!("wall-clock needs at least {MIN_REPS} repetitions"));
    }
    let (x_c, y_c, x_t) = bench_inputs(model.config(), n, m, 0)?;
    let mut samples = Vec::with_capacity(reps);
    for rep in 0..=reps {
        let mut g = Graph::no_grad();
        let p = model.bind(&mut g);
        let seconds = match phase {
            Phase::Condition => {
                let start = Instant::now();
                model.condition_on(&mut g, &p, &x_c, &y_c)?;
                start.elapsed().as_secs_f64()
            }
            Phase::Query => {
                let state = model.condition_on(&mut g, &p, &x_c, &y_c)?;
                let start = Instant::now();
                model.query_from(&mut g, &p, &state, &x_t)?;
                start.elapsed().as_secs_f64()
            }
        };
        if rep > 0 {
            samples.push(seconds);
        }
    }
    Ok(samples)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn measure_wallclock(model: &NeuralProcess, phase: Phase, n: usize, m: usize, reps: usize) -> Result<f64> {
    Ok(median(&measure_wallclock_samples(model, phase, n, m, reps)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub const MIN_FIT_POINTS: usize = 4;
pub const MIN_FIT_SPAN: f64 = 8.0;

/// Least-squares slope of `log cost` against `log N`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < MIN_FIT_POINTS {
        return contract(format!("scaling fit needs {MIN_FIT_POINTS} points, got {}", points.len()));
    }
    if let Some(&(n, c)) = points.iter().find(|&&(n, c)| !(n > 0.0) || !(c > 0.0)) {
        return contract(format!("scaling fit needs positive sizes and costs, got ({n}, {c})"));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi / lo < MIN_FIT_SPAN * (1.0 - 1e-12) {
        return contract(format!("sizes span {:.3}x, at least {MIN_FIT_SPAN}x required", hi / lo));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(ScalingFit {
        exponent: slope,
        intercept,
        r_squared,
        points: points.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub variant: Variant,
    pub phase: Phase,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub flops: u64,
    pub median_seconds: f64,
    pub peak_bytes: usize,
}

pub const BENCH_CSV_HEADER: &str = "variant,phase,N,M,L,flops,median_seconds,peak_bytes";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.variant, r.phase, r.n, r.m, r.l, r.flops, r.median_seconds, r.peak_bytes
        );
    }
    s
}

/// One bench row: analytic FLOPs, median time over `reps` and workspace.
/// `reps == 0` skips timing and reports 0 seconds.
pub fn bench_point(model: &NeuralProcess, phase: Phase, n: usize, m: usize, reps: usize) -> Result<BenchRow> {
    let cfg = model.config();
    let flops = count_flops_for(cfg, phase, n as u64, m as u64)?;
    let median_seconds = if reps == 0 {
        0.0
    } else {
        measure_wallclock(model, phase, n, m, reps)?
    };
    Ok(BenchRow {
        variant: cfg.variant,
        phase,
        n,
        m,
        l: if cfg.variant.uses_latents() { cfg.n_latents } else { 0 },
        flops,
        median_seconds,
        peak_bytes: measure_peak_bytes(model, phase, n, m)?,
    })
}
