//! Multi-head scaled dot-product attention and pre-norm transformer blocks.
//!
//! All token streams are rank-3 `[batch, tokens, d_model]`.

use lbanp_tensor::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{contract, NpError, Result};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::params::{BoundParams, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(NpError::Config("attention widths must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(NpError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Boolean attention pattern: rows are query tokens, columns key tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n_queries: usize,
    n_keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n_queries: usize, n_keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n_queries * n_keys {
            return contract(format!(
                "mask of {} entries for {n_queries}x{n_keys}",
                allowed.len()
            ));
        }
        for r in 0..n_queries {
            if !allowed[r * n_keys..(r + 1) * n_keys].iter().any(|&a| a) {
                return contract(format!("mask row {r} allows no keys"));
            }
        }
        Ok(AttentionMask {
            n_queries,
            n_keys,
            allowed,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.n_keys + key]
    }

    /// Additive form: 0 where allowed, `-inf` elsewhere.
    pub fn additive(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::new([self.n_queries, self.n_keys], data).expect("nonempty mask")
    }

    /// Same mask with key columns reordered: column `j` of the result is
    /// column `perm[j]` of `self`.
    pub fn permute_keys(&self, perm: &[usize]) -> Self {
        let mut allowed = Vec::with_capacity(self.allowed.len());
        for r in 0..self.n_queries {
            allowed.extend(perm.iter().map(|&c| self.allowed(r, c)));
        }
        AttentionMask {
            allowed,
            ..self.clone()
        }
    }
}

/// Mask for joint context/target processing: every token sees all `n_context`
/// context tokens, targets additionally see themselves and no other target.
pub fn tnp_mask(n_context: usize, n_target: usize) -> Result<AttentionMask> {
    if n_context == 0 {
        return contract("tnp_mask needs at least one context token");
    }
    let n = n_context + n_target;
    let mut allowed = vec![false; n * n];
    for r in 0..n {
        allowed[r * n..r * n + n_context].fill(true);
        if r >= n_context {
            allowed[r * n + r] = true;
        }
    }
    AttentionMask::new(n, n, allowed)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), d, d, rng),
            key: Linear::new(store, &format!("{name}.k"), d, d, rng),
            value: Linear::new(store, &format!("{name}.v"), d, d, rng),
            output: Linear::new(store, &format!("{name}.o"), d, d, rng),
            n_heads: cfg.n_heads,
            d_model: d,
        }
    }

    /// Attend from `queries` to `keys_values`; returns the projected output
    /// and the attention weights `[batch, heads, nq, nk]`.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        queries: Var,
        keys_values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Var)> {
        let (b, nq, nk) = self.check_streams(g, queries, keys_values)?;
        if let Some(m) = mask {
            if m.n_queries() != nq || m.n_keys() != nk {
                return contract(format!(
                    "mask is {}x{}, attention is {nq}x{nk}",
                    m.n_queries(),
                    m.n_keys()
                ));
            }
        }
        let (h, dh) = (self.n_heads, self.d_model / self.n_heads);

        let q = self.query.forward(g, p, queries)?;
        let q = g.reshape(q, &[b, nq, h, dh])?;
        let q = g.permute(q, &[0, 2, 1, 3])?;
        let k = self.key.forward(g, p, keys_values)?;
        let k = g.reshape(k, &[b, nk, h, dh])?;
        let kt = g.permute(k, &[0, 2, 3, 1])?;
        let v = self.value.forward(g, p, keys_values)?;
        let v = g.reshape(v, &[b, nk, h, dh])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;

        let scores = g.matmul(q, kt)?;
        let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            let bias = g.input(m.additive());
            scores = g.add(scores, bias)?;
        }
        let weights = g.softmax(scores, 3)?;
        let mixed = g.matmul(weights, v)?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = g.reshape(mixed, &[b, nq, self.d_model])?;
        let out = self.output.forward(g, p, mixed)?;
        Ok((out, weights))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        queries: Var,
        keys_values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(g, p, queries, keys_values, mask)?.0)
    }

    fn check_streams(&self, g: &Graph, q: Var, kv: Var) -> Result<(usize, usize, usize)> {
        let (sq, sk) = (g.shape(q), g.shape(kv));
        if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != self.d_model || sk[2] != self.d_model {
            return Err(NpError::Contract(format!(
                "attention streams {sq:?} / {sk:?} incompatible with d_model {}",
                self.d_model
            )));
        }
        Ok((sq[0], sq[1], sk[1]))
    }

    /// FLOPs for one task attending `nq` queries to `nk` keys.
    pub fn flops(&self, nq: u64, nk: u64) -> u64 {
        let d = self.d_model as u64;
        let h = self.n_heads as u64;
        self.query.flops(nq)
            + self.key.flops(nk)
            + self.value.flops(nk)
            + 2 * nq * nk * d // scores
            + 4 * h * nq * nk // softmax
            + 2 * nq * nk * d // weighted sum
            + self.output.flops(nq)
    }
}

/// Position-wise GELU feed-forward `d -> d_ff -> d`.
fn feed_forward<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut R) -> Mlp {
    Mlp::new(store, name, &[cfg.d_model, cfg.d_ff, cfg.d_model], rng)
}

/// `x + MHA(LN(x))` then `x + FF(LN(x))`.
#[derive(Clone, Debug)]
pub struct SelfAttnBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

impl SelfAttnBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut R) -> Self {
        SelfAttnBlock {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), cfg.d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), cfg.d_model),
            ff: feed_forward(store, &format!("{name}.ff"), cfg, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let n = self.norm_attn.forward(g, p, x)?;
        let a = self.attn.forward(g, p, n, n, mask)?;
        let x = g.add(x, a)?;
        let n = self.norm_ff.forward(g, p, x)?;
        let f = self.ff.forward(g, p, n)?;
        Ok(g.add(x, f)?)
    }

    pub fn flops(&self, n: u64) -> u64 {
        self.attn.flops(n, n) + self.ff.flops(n)
    }

    /// Zero both residual branches' output projections.
    pub fn zero_outputs(&self, store: &mut ParamStore) {
        self.attn.output.zero(store);
        if let Some(last) = self.ff.layers.last() {
            last.zero(store);
        }
    }
}

/// Cross-attention block with the residual on the query stream; keys/values
/// get their own layer norm.
#[derive(Clone, Debug)]
pub struct CrossAttnBlock {
    pub norm_query: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

impl CrossAttnBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut R) -> Self {
        CrossAttnBlock {
            norm_query: LayerNorm::new(store, &format!("{name}.ln_q"), cfg.d_model),
            norm_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), cfg.d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), cfg.d_model),
            ff: feed_forward(store, &format!("{name}.ff"), cfg, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, queries: Var, keys_values: Var) -> Result<Var> {
        let nq = self.norm_query.forward(g, p, queries)?;
        let nkv = self.norm_kv.forward(g, p, keys_values)?;
        let a = self.attn.forward(g, p, nq, nkv, None)?;
        let x = g.add(queries, a)?;
        let n = self.norm_ff.forward(g, p, x)?;
        let f = self.ff.forward(g, p, n)?;
        Ok(g.add(x, f)?)
    }

    pub fn flops(&self, nq: u64, nk: u64) -> u64 {
        self.attn.flops(nq, nk) + self.ff.flops(nq)
    }

    pub fn zero_outputs(&self, store: &mut ParamStore) {
        self.attn.output.zero(store);
        if let Some(last) = self.ff.layers.last() {
            last.zero(store);
        }
    }
}
