//! Dense building blocks shared by every model.

use lbanp_tensor::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::params::{glorot_uniform, BoundParams, ParamId, ParamStore};

/// Affine map `x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, d_in, d_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.var(self.weight))?;
        Ok(g.add(h, p.var(self.bias))?)
    }

    /// Multiply-add FLOPs for `rows` input rows.
    pub fn flops(&self, rows: u64) -> u64 {
        2 * rows * (self.d_in * self.d_out) as u64
    }

    /// Zero weight and bias, turning the layer into the constant 0.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([d], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, p.var(self.gamma), p.var(self.beta), Self::EPS)?)
    }
}

/// Stack of linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths in order.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = g.gelu(h)?;
            }
        }
        Ok(h)
    }

    pub fn flops(&self, rows: u64) -> u64 {
        self.layers.iter().map(|l| l.flops(rows)).sum()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }
}
