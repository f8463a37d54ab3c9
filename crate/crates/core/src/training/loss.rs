use lbanp_tensor::{Graph, Var};

use crate::error::{contract, Result};
use crate::models::Prediction;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean over every entry of `−log N(y; μ, σ²)`.
pub fn gaussian_nll_diag(g: &mut Graph, mean: Var, std: Var, y: Var) -> Result<Var> {
    let diff = g.sub(y, mean)?;
    let z = g.div(diff, std)?;
    let z2 = g.square(z)?;
    let quad = g.scale(z2, 0.5);
    let log_std = g.log(std)?;
    let per = g.add(quad, log_std)?;
    let m = g.mean(per);
    Ok(g.add_scalar(m, HALF_LN_2PI))
}

/// Per-task full-covariance NLL divided by the task dimension `d`, averaged
/// over the batch. `mean`, `y`: `[B, d]`; `chol`: `[B, d, d]`.
pub fn gaussian_nll_full(g: &mut Graph, mean: Var, chol: Var, y: Var) -> Result<Var> {
    let diag = g.diagonal(chol)?;
    if let Some(bad) = g.value(diag).data().iter().find(|&&v| !(v > 0.0)) {
        return contract(format!("Cholesky diagonal entry {bad} is not positive"));
    }
    let diff = g.sub(y, mean)?;
    let z = g.solve_lower(chol, diff)?;
    let z2 = g.square(z)?;
    let quad = g.mean(z2);
    let quad = g.scale(quad, 0.5);
    let log_diag = g.log(diag)?;
    let logdet = g.mean(log_diag);
    let total = g.add(quad, logdet)?;
    Ok(g.add_scalar(total, HALF_LN_2PI))
}

/// NLL of the targets `y_t: [B, M, y_dim]` under a prediction of either kind.
pub fn prediction_nll(g: &mut Graph, pred: &Prediction, y_t: Var) -> Result<Var> {
    match *pred {
        Prediction::Diag { mean, std } => gaussian_nll_diag(g, mean, std, y_t),
        Prediction::Full { mean, chol } => {
            let s = g.shape(y_t).to_vec();
            let y = g.reshape(y_t, &[s[0], s[1] * s[2]])?;
            gaussian_nll_full(g, mean, chol, y)
        }
    }
}
