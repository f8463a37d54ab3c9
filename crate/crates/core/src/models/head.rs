//! Gaussian predictive heads.

use lbanp_tensor::{Graph, Tensor, Var};
use rand::Rng;

use crate::attention::{AttentionConfig, CrossAttnBlock, SelfAttnBlock};
use crate::error::Result;
use crate::nn::Mlp;
use crate::params::{normal_init, BoundParams, ParamId, ParamStore};

use super::config::{HeadKind, ModelConfig};

/// Graph-level predictive distribution.
#[derive(Clone, Copy, Debug)]
pub enum Prediction {
    /// `mean`, `std`: `[B, M, y_dim]`.
    Diag { mean: Var, std: Var },
    /// `mean`: `[B, M·y_dim]` (target-major), `chol`: `[B, M·y_dim, M·y_dim]`
    /// lower triangular with positive diagonal.
    Full { mean: Var, chol: Var },
}

impl Prediction {
    pub fn mean(&self) -> Var {
        match *self {
            Prediction::Diag { mean, .. } | Prediction::Full { mean, .. } => mean,
        }
    }

    pub fn values(&self, g: &Graph) -> GaussianPrediction {
        match *self {
            Prediction::Diag { mean, std } => GaussianPrediction::Diag(GaussianDiagPrediction {
                mean: g.value(mean).clone(),
                std: g.value(std).clone(),
            }),
            Prediction::Full { mean, chol } => GaussianPrediction::Full(GaussianFullPrediction {
                mean: g.value(mean).clone(),
                chol: g.value(chol).clone(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiagPrediction {
    pub mean: Tensor,
    pub std: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFullPrediction {
    pub mean: Tensor,
    pub chol: Tensor,
}

impl GaussianFullPrediction {
    /// Dense covariance `chol · cholᵀ` for task `b`, row-major `[d, d]`.
    pub fn covariance(&self, b: usize) -> Vec<f64> {
        let d = self.mean.shape()[1];
        let l = &self.chol.data()[b * d * d..(b + 1) * d * d];
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = (0..=i.min(j)).map(|k| l[i * d + k] * l[j * d + k]).sum();
            }
        }
        cov
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GaussianPrediction {
    Diag(GaussianDiagPrediction),
    Full(GaussianFullPrediction),
}

/// MLP emitting `[mean ‖ raw std]` per target.
#[derive(Clone, Debug)]
pub struct DiagHead {
    pub mlp: Mlp,
    pub y_dim: usize,
    pub std_floor: f64,
}

impl DiagHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        DiagHead {
            mlp: Mlp::new(store, "head.mlp", &[d, d, d, 2 * cfg.y_dim], rng),
            y_dim: cfg.y_dim,
            std_floor: cfg.std_floor,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Prediction> {
        let out = self.mlp.forward(g, p, emb)?;
        let mean = g.slice(out, 2, 0, self.y_dim)?;
        let raw = g.slice(out, 2, self.y_dim, self.y_dim)?;
        let std = positive_std(g, raw, self.std_floor)?;
        Ok(Prediction::Diag { mean, std })
    }
}

fn positive_std(g: &mut Graph, raw: Var, floor: f64) -> Result<Var> {
    let sp = g.softplus(raw)?;
    Ok(g.add_scalar(sp, floor))
}

/// Turns per-target MLP output into a mean vector and Cholesky factor.
///
/// Per target the MLP emits `y_dim` means, `y_dim` raw diagonal entries and
/// `y_dim·f` features. Diagonal entries become `floor + softplus(raw)`; the
/// strictly-lower entries are inner products of the (scaled) features.
#[derive(Clone, Debug)]
pub struct CholeskyReadout {
    pub mlp: Mlp,
    pub y_dim: usize,
    pub features: usize,
    pub std_floor: f64,
}

impl CholeskyReadout {
    const FEATURE_INIT_SCALE: f64 = 0.1;

    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let width = cfg.y_dim * (2 + cfg.nd_features);
        let mlp = Mlp::new(store, name, &[d, d, d, width], rng);
        // Start the off-diagonal Gram small against the diagonal. Target
        // embeddings are nearly identical at init, and a factor whose
        // off-diagonal dwarfs its diagonal has an inverse that grows
        // geometrically with M.
        let last = mlp.layers.last().expect("readout has layers").weight;
        let w = store.get_mut(last);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if i % width >= 2 * cfg.y_dim {
                *v *= Self::FEATURE_INIT_SCALE;
            }
        }
        CholeskyReadout {
            mlp,
            y_dim: cfg.y_dim,
            features: cfg.nd_features,
            std_floor: cfg.std_floor,
        }
    }

    fn forward(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Prediction> {
        let (b, m) = (g.shape(emb)[0], g.shape(emb)[1]);
        let (y, f) = (self.y_dim, self.features);
        let dim = m * y;
        let out = self.mlp.forward(g, p, emb)?;
        let mean = g.slice(out, 2, 0, y)?;
        let mean = g.reshape(mean, &[b, dim])?;
        let raw_diag = g.slice(out, 2, y, y)?;
        let raw_diag = g.reshape(raw_diag, &[b, dim])?;
        let diag = positive_std(g, raw_diag, self.std_floor)?;
        let diag = g.diag_embed(diag)?;
        let feats = g.slice(out, 2, 2 * y, y * f)?;
        let feats = g.reshape(feats, &[b, dim, f])?;
        let feats = g.scale(feats, 1.0 / (f as f64).sqrt());
        let feats_t = g.transpose(feats)?;
        let gram = g.matmul(feats, feats_t)?;
        let lower = g.tril(gram, true)?;
        let chol = g.add(lower, diag)?;
        Ok(Prediction::Full { mean, chol })
    }
}

/// Self-attention over all target embeddings, then a Cholesky readout.
#[derive(Clone, Debug)]
pub struct NdHead {
    pub blocks: Vec<SelfAttnBlock>,
    pub readout: CholeskyReadout,
}

impl NdHead {
    pub const DEPTH: usize = 2;

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let att = cfg.attention();
        NdHead {
            blocks: (0..Self::DEPTH)
                .map(|i| SelfAttnBlock::new(store, &format!("head.nd{i}"), &att, rng))
                .collect(),
            readout: CholeskyReadout::new(store, "head.mlp", cfg, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Prediction> {
        let mut h = emb;
        for block in &self.blocks {
            h = block.forward(g, p, h, None)?;
        }
        self.readout.forward(g, p, h)
    }
}

/// Latent bottleneck over the targets: learned latents read the target
/// embeddings `Q` times, then each target reads the final latents.
#[derive(Clone, Debug)]
pub struct EndHead {
    pub latents: ParamId,
    pub n_latents: usize,
    pub read_targets: Vec<CrossAttnBlock>,
    pub mix_latents: Vec<SelfAttnBlock>,
    pub target_readout: CrossAttnBlock,
    pub readout: CholeskyReadout,
}

impl EndHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let att: AttentionConfig = cfg.attention();
        let latents = store.add(
            "head.end.latents",
            normal_init(rng, &[cfg.n_nd_latents, cfg.d_model], 0.02),
        );
        let mut read_targets = Vec::new();
        let mut mix_latents = Vec::new();
        for i in 0..cfg.n_nd_layers {
            read_targets.push(CrossAttnBlock::new(store, &format!("head.end.read{i}"), &att, rng));
            mix_latents.push(SelfAttnBlock::new(store, &format!("head.end.mix{i}"), &att, rng));
        }
        EndHead {
            latents,
            n_latents: cfg.n_nd_latents,
            read_targets,
            mix_latents,
            target_readout: CrossAttnBlock::new(store, "head.end.out", &att, rng),
            readout: CholeskyReadout::new(store, "head.mlp", cfg, rng),
        }
    }

    /// Latent stream `[B, n_latents, d]` after the `Q` read/mix rounds.
    pub fn latent_stream(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Var> {
        let b = g.shape(emb)[0];
        let mut lq = g.expand(p.var(self.latents), 0, b)?;
        for (read, mix) in self.read_targets.iter().zip(&self.mix_latents) {
            lq = read.forward(g, p, lq, emb)?;
            lq = mix.forward(g, p, lq, None)?;
        }
        Ok(lq)
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Prediction> {
        let lq = self.latent_stream(g, p, emb)?;
        let h = self.target_readout.forward(g, p, emb, lq)?;
        self.readout.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    Diag(DiagHead),
    Nd(NdHead),
    End(EndHead),
}

impl Head {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        match cfg.head {
            HeadKind::Diag => Head::Diag(DiagHead::new(store, cfg, rng)),
            HeadKind::Nd => Head::Nd(NdHead::new(store, cfg, rng)),
            HeadKind::End => Head::End(EndHead::new(store, cfg, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Prediction> {
        match self {
            Head::Diag(h) => h.forward(g, p, emb),
            Head::Nd(h) => h.forward(g, p, emb),
            Head::End(h) => h.forward(g, p, emb),
        }
    }
}
