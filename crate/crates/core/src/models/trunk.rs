//! Context encoders and target decoders: everything between token embedding
//! and the predictive head.

use lbanp_tensor::{Graph, Var};
use rand::Rng;

use crate::attention::{tnp_mask, AttentionConfig, CrossAttnBlock, SelfAttnBlock};
use crate::error::{contract, NpError, Result};
use crate::nn::Mlp;
use crate::params::{normal_init, BoundParams, ParamId, ParamStore};

use super::config::Variant;

/// Output of the conditioning phase.
///
/// Every `Var` is batched `[B, ...]` and belongs to the graph the state was
/// built on.
#[derive(Clone, Debug)]
pub enum ConditionedState {
    /// Mean-aggregated context representation `[B, d]`.
    Cnp { summary: Var },
    /// No conditioning work: the raw context tokens `[B, N, d]` are carried
    /// to the joint masked pass.
    TnpD { context: Var },
    /// Per-layer context embeddings, each `[B, N, d]`.
    Eqtnp { layers: Vec<Var> },
    /// Per-layer latent embeddings, each `[B, L, d]`.
    Lbanp { layers: Vec<Var> },
}

impl ConditionedState {
    pub fn tag(&self) -> &'static str {
        match self {
            ConditionedState::Cnp { .. } => "cnp",
            ConditionedState::TnpD { .. } => "tnp-d",
            ConditionedState::Eqtnp { .. } => "eqtnp",
            ConditionedState::Lbanp { .. } => "lbanp",
        }
    }

    /// Reals held per task. TNP-D holds no conditioned representation.
    pub fn reals_per_task(&self, g: &Graph) -> usize {
        let per_task = |v: &Var| {
            let s = g.shape(*v);
            s[1..].iter().product::<usize>()
        };
        match self {
            ConditionedState::Cnp { summary } => per_task(summary),
            ConditionedState::TnpD { .. } => 0,
            ConditionedState::Eqtnp { layers } | ConditionedState::Lbanp { layers } => {
                layers.iter().map(per_task).sum()
            }
        }
    }

    pub fn bytes_per_task(&self, g: &Graph) -> usize {
        self.reals_per_task(g) * std::mem::size_of::<f64>()
    }
}

fn mismatch<T>(want: &str, got: &ConditionedState) -> Result<T> {
    contract(format!("{want} query given a {} state", got.tag()))
}

/// Deep-sets baseline: mean pooling then an MLP over `[query ‖ summary]`.
#[derive(Clone, Debug)]
pub struct CnpTrunk {
    pub decoder: Mlp,
}

impl CnpTrunk {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        CnpTrunk {
            decoder: Mlp::new(store, "cnp.decoder", &[2 * d, d, d, d], rng),
        }
    }

    pub fn condition(&self, g: &mut Graph, context: Var) -> Result<ConditionedState> {
        let summary = g.mean_axis(context, 1)?;
        Ok(ConditionedState::Cnp { summary })
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, queries: Var) -> Result<Var> {
        let ConditionedState::Cnp { summary } = state else {
            return mismatch("cnp", state);
        };
        let m = g.shape(queries)[1];
        let tiled = g.expand(*summary, 1, m)?;
        let joined = g.concat(&[queries, tiled], 2)?;
        self.decoder.forward(g, p, joined)
    }
}

/// Masked transformer over the concatenated context and target tokens.
#[derive(Clone, Debug)]
pub struct TnpDTrunk {
    pub blocks: Vec<SelfAttnBlock>,
}

impl TnpDTrunk {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &AttentionConfig, layers: usize, rng: &mut R) -> Self {
        TnpDTrunk {
            blocks: (0..layers)
                .map(|i| SelfAttnBlock::new(store, &format!("tnpd.block{i}"), cfg, rng))
                .collect(),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, context: Var, queries: Var) -> Result<Var> {
        let (n, m) = (g.shape(context)[1], g.shape(queries)[1]);
        let mask = tnp_mask(n, m)?;
        let mut x = g.concat(&[context, queries], 1)?;
        for block in &self.blocks {
            x = block.forward(g, p, x, Some(&mask))?;
        }
        Ok(g.slice(x, 1, n, m)?)
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, queries: Var) -> Result<Var> {
        let ConditionedState::TnpD { context } = state else {
            return mismatch("tnp-d", state);
        };
        self.forward(g, p, *context, queries)
    }
}

/// Context self-attention stack read by layer-matched target cross-attention.
#[derive(Clone, Debug)]
pub struct EqtnpTrunk {
    pub context_blocks: Vec<SelfAttnBlock>,
    pub query_blocks: Vec<CrossAttnBlock>,
}

impl EqtnpTrunk {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &AttentionConfig, layers: usize, rng: &mut R) -> Self {
        let context_blocks = (0..layers)
            .map(|i| SelfAttnBlock::new(store, &format!("eqtnp.context{i}"), cfg, rng))
            .collect();
        let query_blocks = (0..layers)
            .map(|i| CrossAttnBlock::new(store, &format!("eqtnp.query{i}"), cfg, rng))
            .collect();
        EqtnpTrunk {
            context_blocks,
            query_blocks,
        }
    }

    pub fn condition(&self, g: &mut Graph, p: &BoundParams, context: Var) -> Result<ConditionedState> {
        let mut layers = Vec::with_capacity(self.context_blocks.len());
        let mut h = context;
        for block in &self.context_blocks {
            h = block.forward(g, p, h, None)?;
            layers.push(h);
        }
        Ok(ConditionedState::Eqtnp { layers })
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, queries: Var) -> Result<Var> {
        let ConditionedState::Eqtnp { layers } = state else {
            return mismatch("eqtnp", state);
        };
        let mut q = queries;
        for (block, &ctx) in self.query_blocks.iter().zip(layers) {
            q = block.forward(g, p, q, ctx)?;
        }
        Ok(q)
    }
}

/// Latent bottleneck: `L` learned vectors alternately read the context and
/// self-attend; targets then read the latents.
#[derive(Clone, Debug)]
pub struct LbanpTrunk {
    pub latents: ParamId,
    pub n_latents: usize,
    pub read_context: Vec<CrossAttnBlock>,
    pub mix_latents: Vec<SelfAttnBlock>,
    /// One block per layer, or a single block reading only the last layer.
    pub query_blocks: Vec<CrossAttnBlock>,
    pub last_layer_only: bool,
}

impl LbanpTrunk {
    pub const LATENT_INIT_STD: f64 = 0.02;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &AttentionConfig,
        layers: usize,
        n_latents: usize,
        last_layer_only: bool,
        rng: &mut R,
    ) -> Self {
        let latents = store.add(
            "lbanp.latents",
            normal_init(rng, &[n_latents, cfg.d_model], Self::LATENT_INIT_STD),
        );
        let mut read_context = Vec::with_capacity(layers);
        let mut mix_latents = Vec::with_capacity(layers);
        for i in 0..layers {
            read_context.push(CrossAttnBlock::new(store, &format!("lbanp.read{i}"), cfg, rng));
            mix_latents.push(SelfAttnBlock::new(store, &format!("lbanp.mix{i}"), cfg, rng));
        }
        let n_query = if last_layer_only { 1 } else { layers };
        let query_blocks = (0..n_query)
            .map(|i| CrossAttnBlock::new(store, &format!("lbanp.query{i}"), cfg, rng))
            .collect();
        LbanpTrunk {
            latents,
            n_latents,
            read_context,
            mix_latents,
            query_blocks,
            last_layer_only,
        }
    }

    pub fn condition(&self, g: &mut Graph, p: &BoundParams, context: Var) -> Result<ConditionedState> {
        let b = g.shape(context)[0];
        let mut lemb = g.expand(p.var(self.latents), 0, b)?;
        let mut layers = Vec::with_capacity(self.read_context.len());
        for (read, mix) in self.read_context.iter().zip(&self.mix_latents) {
            lemb = read.forward(g, p, lemb, context)?;
            lemb = mix.forward(g, p, lemb, None)?;
            layers.push(lemb);
        }
        Ok(ConditionedState::Lbanp { layers })
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, queries: Var) -> Result<Var> {
        let ConditionedState::Lbanp { layers } = state else {
            return mismatch("lbanp", state);
        };
        if self.last_layer_only {
            let last = *layers
                .last()
                .ok_or_else(|| NpError::Contract("empty latent state".into()))?;
            return self.query_blocks[0].forward(g, p, queries, last);
        }
        let mut q = queries;
        for (block, &lemb) in self.query_blocks.iter().zip(layers) {
            q = block.forward(g, p, q, lemb)?;
        }
        Ok(q)
    }
}

#[derive(Clone, Debug)]
pub enum Trunk {
    Cnp(CnpTrunk),
    TnpD(TnpDTrunk),
    Eqtnp(EqtnpTrunk),
    Lbanp(LbanpTrunk),
}

impl Trunk {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        variant: Variant,
        cfg: &AttentionConfig,
        layers: usize,
        n_latents: usize,
        rng: &mut R,
    ) -> Self {
        match variant {
            Variant::Cnp => Trunk::Cnp(CnpTrunk::new(store, cfg.d_model, rng)),
            Variant::TnpD => Trunk::TnpD(TnpDTrunk::new(store, cfg, layers, rng)),
            Variant::Eqtnp => Trunk::Eqtnp(EqtnpTrunk::new(store, cfg, layers, rng)),
            Variant::Lbanp => Trunk::Lbanp(LbanpTrunk::new(store, cfg, layers, n_latents, false, rng)),
            Variant::LbanpL => Trunk::Lbanp(LbanpTrunk::new(store, cfg, layers, n_latents, true, rng)),
        }
    }

    pub fn condition(&self, g: &mut Graph, p: &BoundParams, context: Var) -> Result<ConditionedState> {
        match self {
            Trunk::Cnp(t) => t.condition(g, context),
            Trunk::TnpD(_) => Ok(ConditionedState::TnpD { context }),
            Trunk::Eqtnp(t) => t.condition(g, p, context),
            Trunk::Lbanp(t) => t.condition(g, p, context),
        }
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, queries: Var) -> Result<Var> {
        match self {
            Trunk::Cnp(t) => t.query(g, p, state, queries),
            Trunk::TnpD(t) => t.query(g, p, state, queries),
            Trunk::Eqtnp(t) => t.query(g, p, state, queries),
            Trunk::Lbanp(t) => t.query(g, p, state, queries),
        }
    }
}
