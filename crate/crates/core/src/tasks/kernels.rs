use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, NpError, Result};

/// Stationary covariance functions on scalar inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Matern52,
}

impl KernelKind {
    pub fn eval(self, x: f64, x2: f64, l: f64, sigma_f: f64) -> Result<f64> {
        match self {
            KernelKind::Rbf => rbf_kernel(x, x2, l, sigma_f),
            KernelKind::Matern52 => matern52_kernel(x, x2, l, sigma_f),
        }
    }

    /// Covariance as a function of the distance `r ≥ 0`; no validation.
    pub(crate) fn of_distance(self, r: f64, l: f64, sigma_f: f64) -> f64 {
        let s2 = sigma_f * sigma_f;
        match self {
            KernelKind::Rbf => s2 * (-(r * r) / (2.0 * l * l)).exp(),
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                s2 * (1.0 + a + 5.0 * r * r / (3.0 * l * l)) * (-a).exp()
            }
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Matern52 => "matern52",
        })
    }
}

impl FromStr for KernelKind {
    type Err = NpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "matern52" | "matern" => Ok(KernelKind::Matern52),
            other => Err(NpError::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

fn check(l: f64, sigma_f: f64) -> Result<()> {
    if !(l > 0.0) || !(sigma_f > 0.0) {
        return contract(format!("kernel needs l > 0 and sigma_f > 0, got l={l}, sigma_f={sigma_f}"));
    }
    Ok(())
}

/// `σ_f²·exp(−(x−x')²/(2l²))`.
pub fn rbf_kernel(x: f64, x2: f64, l: f64, sigma_f: f64) -> Result<f64> {
    check(l, sigma_f)?;
    Ok(KernelKind::Rbf.of_distance((x - x2).abs(), l, sigma_f))
}

/// `σ_f²·(1 + √5·r/l + 5r²/(3l²))·exp(−√5·r/l)` with `r = |x − x'|`.
pub fn matern52_kernel(x: f64, x2: f64, l: f64, sigma_f: f64) -> Result<f64> {
    check(l, sigma_f)?;
    Ok(KernelKind::Matern52.of_distance((x - x2).abs(), l, sigma_f))
}

/// Dense kernel matrix over `xs`.
pub fn kernel_matrix(kind: KernelKind, xs: &[f64], l: f64, sigma_f: f64) -> Result<Vec<f64>> {
    check(l, sigma_f)?;
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kind.of_distance((xs[i] - xs[j]).abs(), l, sigma_f);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}
