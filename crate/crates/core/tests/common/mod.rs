//! Plain-f64 reference implementations used as independent oracles.
#![allow(dead_code)]

use lbanp_core::models::{ModelConfig, NeuralProcess};
use lbanp_core::params::ParamStore;
use lbanp_core::TaskBatch;

pub type Mat = Vec<Vec<f64>>;

pub fn param(store: &ParamStore, name: &str) -> Vec<f64> {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get(id).data().to_vec()
}

pub fn linear(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let w = param(store, &format!("{name}.weight"));
    let b = param(store, &format!("{name}.bias"));
    let d_out = b.len();
    let d_in = w.len() / d_out;
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), d_in);
            (0..d_out)
                .map(|j| b[j] + (0..d_in).map(|i| row[i] * w[i * d_out + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn mlp(store: &ParamStore, name: &str, layers: usize, x: &Mat) -> Mat {
    let mut h = x.clone();
    for i in 0..layers {
        h = linear(store, &format!("{name}.{i}"), &h);
        if i + 1 < layers {
            h = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        }
    }
    h
}

pub fn layer_norm(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let g = param(store, &format!("{name}.gamma"));
    let b = param(store, &format!("{name}.beta"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let s = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(i, v)| (v - mu) / s * g[i] + b[i]).collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Returns the output and per-head weights `[h][nq][nk]`.
pub fn mha(
    store: &ParamStore,
    name: &str,
    heads: usize,
    q_in: &Mat,
    kv_in: &Mat,
    allowed: Option<&dyn Fn(usize, usize) -> bool>,
) -> (Mat, Vec<Mat>) {
    let q = linear(store, &format!("{name}.q"), q_in);
    let k = linear(store, &format!("{name}.k"), kv_in);
    let v = linear(store, &format!("{name}.v"), kv_in);
    let d = q[0].len();
    let dh = d / heads;
    let mut mixed = vec![vec![0.0; d]; q.len()];
    let mut weights = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut wh = Vec::new();
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| {
                    if allowed.is_some_and(|a| !a(i, j)) {
                        f64::NEG_INFINITY
                    } else {
                        cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt()
                    }
                })
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                mixed[i][c] = w.iter().zip(&v).map(|(wj, vj)| wj * vj[c]).sum();
            }
            wh.push(w);
        }
        weights.push(wh);
    }
    (linear(store, &format!("{name}.o"), &mixed), weights)
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn self_block(
    store: &ParamStore,
    name: &str,
    heads: usize,
    x: &Mat,
    allowed: Option<&dyn Fn(usize, usize) -> bool>,
) -> Mat {
    let n = layer_norm(store, &format!("{name}.ln_attn"), x);
    let (a, _) = mha(store, &format!("{name}.attn"), heads, &n, &n, allowed);
    let x = add(x, &a);
    let n = layer_norm(store, &format!("{name}.ln_ff"), &x);
    add(&x, &mlp(store, &format!("{name}.ff"), 2, &n))
}

pub fn cross_block(store: &ParamStore, name: &str, heads: usize, q: &Mat, kv: &Mat) -> Mat {
    let nq = layer_norm(store, &format!("{name}.ln_q"), q);
    let nkv = layer_norm(store, &format!("{name}.ln_kv"), kv);
    let (a, _) = mha(store, &format!("{name}.attn"), heads, &nq, &nkv, None);
    let x = add(q, &a);
    let n = layer_norm(store, &format!("{name}.ln_ff"), &x);
    add(&x, &mlp(store, &format!("{name}.ff"), 2, &n))
}

pub fn rows(data: &[f64], width: usize) -> Mat {
    data.chunks(width).map(<[f64]>::to_vec).collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Tokens `MLP([x ‖ y ‖ flag])` of one task.
pub fn embed(store: &ParamStore, xs: &Mat, ys: Option<&Mat>, y_dim: usize) -> Mat {
    let feats: Mat = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = x.clone();
            match ys {
                Some(y) => {
                    r.extend(&y[i]);
                    r.push(1.0);
                }
                None => {
                    r.extend(std::iter::repeat(0.0).take(y_dim));
                    r.push(0.0);
                }
            }
            r
        })
        .collect();
    mlp(store, "embed", 2, &feats)
}

/// Diag-head mean and std of one task from target embeddings.
pub fn diag_head(store: &ParamStore, cfg: &ModelConfig, emb: &Mat) -> (Mat, Mat) {
    let out = mlp(store, "head.mlp", 3, emb);
    let y = cfg.y_dim;
    let mean = out.iter().map(|r| r[..y].to_vec()).collect();
    let std = out
        .iter()
        .map(|r| r[y..].iter().map(|&v| cfg.std_floor + softplus(v)).collect())
        .collect();
    (mean, std)
}

/// Full reference forward pass of a diag-head model for task `b` of a batch.
pub fn reference_predict(model: &NeuralProcess, batch: &TaskBatch, b: usize) -> (Mat, Mat) {
    let cfg = model.config();
    let store = model.params();
    let task = batch.task(b);
    let xc = rows(task.x_c.data(), cfg.x_dim);
    let yc = rows(task.y_c.data(), cfg.y_dim);
    let xt = rows(task.x_t.data(), cfg.x_dim);
    let ctx = embed(store, &xc, Some(&yc), cfg.y_dim);
    let qry = embed(store, &xt, None, cfg.y_dim);
    let h = cfg.n_heads;
    let k = cfg.n_layers;
    use lbanp_core::Variant::*;
    let emb = match cfg.variant {
        Cnp => {
            let n = ctx.len() as f64;
            let d = ctx[0].len();
            let r: Vec<f64> = (0..d).map(|c| ctx.iter().map(|t| t[c]).sum::<f64>() / n).collect();
            let joined: Mat = qry
                .iter()
                .map(|q| q.iter().chain(&r).copied().collect())
                .collect();
            mlp(store, "cnp.decoder", 3, &joined)
        }
        TnpD => {
            let n = ctx.len();
            let mut x: Mat = ctx.iter().chain(&qry).cloned().collect();
            let allowed = |i: usize, j: usize| j < n || i == j;
            for i in 0..k {
                x = self_block(store, &format!("tnpd.block{i}"), h, &x, Some(&allowed));
            }
            x[n..].to_vec()
        }
        Eqtnp => {
            let mut c = ctx.clone();
            let mut q = qry.clone();
            for i in 0..k {
                c = self_block(store, &format!("eqtnp.context{i}"), h, &c, None);
                q = cross_block(store, &format!("eqtnp.query{i}"), h, &q, &c);
            }
            q
        }
        Lbanp | LbanpL => {
            let mut lemb = rows(&param(store, "lbanp.latents"), cfg.d_model);
            let mut layers = Vec::new();
            for i in 0..k {
                lemb = cross_block(store, &format!("lbanp.read{i}"), h, &lemb, &ctx);
                lemb = self_block(store, &format!("lbanp.mix{i}"), h, &lemb, None);
                layers.push(lemb.clone());
            }
            if cfg.variant == LbanpL {
                cross_block(store, "lbanp.query0", h, &qry, layers.last().unwrap())
            } else {
                let mut q = qry.clone();
                for (i, l) in layers.iter().enumerate() {
                    q = cross_block(store, &format!("lbanp.query{i}"), h, &q, l);
                }
                q
            }
        }
    };
    diag_head(store, cfg, &emb)
}

/// Small model configuration for fast tests.
pub fn small_config(variant: lbanp_core::Variant, head: lbanp_core::HeadKind) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        n_layers: 2,
        n_latents: 4,
        n_nd_layers: 2,
        n_nd_latents: 4,
        nd_features: 4,
        ..ModelConfig::new(variant, head)
    }
}

/// Log density of `y ~ N(mu, cov)` via a dense Gauss-Jordan inverse and
/// determinant.
pub fn mvn_logpdf(y: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
    let d = y.len();
    let mut a = cov.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    let mut logdet = 0.0;
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
            .unwrap();
        if piv != col {
            for c in 0..d {
                a.swap(piv * d + c, col * d + c);
                inv.swap(piv * d + c, col * d + c);
            }
        }
        let p = a[col * d + col];
        logdet += p.abs().ln();
        for c in 0..d {
            a[col * d + c] /= p;
            inv[col * d + c] /= p;
        }
        for r in 0..d {
            if r != col {
                let f = a[r * d + col];
                for c in 0..d {
                    a[r * d + c] -= f * a[col * d + c];
                    inv[r * d + c] -= f * inv[col * d + c];
                }
            }
        }
    }
    let diff: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += diff[i] * inv[i * d + j] * diff[j];
        }
    }
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}
