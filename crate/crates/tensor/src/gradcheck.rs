use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates checked per parameter tensor; tensors with fewer are checked exhaustively.
    pub coords_per_tensor: usize,
    /// Denominator floor so near-zero gradients are compared absolutely.
    /// Scaled by `max(1, |loss|)`, since difference roundoff grows with the loss.
    pub abs_floor: f64,
    /// Use the fourth-order five-point stencil instead of the plain central difference.
    pub five_point: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            coords_per_tensor: 64,
            abs_floor: 1e-6,
            five_point: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh graph and one `Var` per entry of `params` and must
/// return a scalar loss. It is called once for the analytic pass and twice
/// per checked coordinate (four times with `five_point`).
pub fn grad_check<F>(params: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(opts.h > 0.0) || !opts.h.is_finite() {
        return Err(TensorError::Contract(format!(
            "finite-difference step must be positive, got {}",
            opts.h
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let floor = opts.abs_floor * g.value(loss).item()?.abs().max(1.0);
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(g);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.input(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        tol: opts.tol,
    };
    for t in 0..params.len() {
        let n = params[t].numel();
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = params[t].data()[c];
            let mut at = |offset: f64| -> Result<f64> {
                work[t].data_mut()[c] = orig + offset;
                let v = eval(&work);
                work[t].data_mut()[c] = orig;
                v
            };
            let h = opts.h;
            let numeric = if opts.five_point {
                (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            let a = analytic[t].data()[c];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some(Mismatch {
                        tensor: t,
                        coord: c,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    Ok(report)
}
