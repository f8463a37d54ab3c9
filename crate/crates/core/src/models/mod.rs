//! The neural process family behind one interface: embed, condition, query,
//! predict.

mod config;
mod head;
mod trunk;

pub use config::{HeadKind, ModelConfig, Variant};
pub use head::{
    CholeskyReadout, DiagHead, EndHead, GaussianDiagPrediction, GaussianFullPrediction, GaussianPrediction, Head,
    NdHead, Prediction,
};
pub use trunk::{CnpTrunk, ConditionedState, EqtnpTrunk, LbanpTrunk, TnpDTrunk, Trunk};

use lbanp_tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::nn::Mlp;
use crate::params::{BoundParams, ParamStore};
use crate::tasks::TaskBatch;

/// A model: configuration, parameters and the module layout that indexes them.
#[derive(Clone, Debug)]
pub struct NeuralProcess {
    config: ModelConfig,
    params: ParamStore,
    embedder: Mlp,
    trunk: Trunk,
    head: Head,
}

impl NeuralProcess {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let att = config.attention();
        let d = config.d_model;
        let token_in = config.x_dim + config.y_dim + 1;
        let embedder = Mlp::new(&mut params, "embed", &[token_in, d, d], &mut rng);
        let trunk = Trunk::new(
            &mut params,
            config.variant,
            &att,
            config.n_layers,
            config.n_latents,
            &mut rng,
        );
        let head = Head::new(&mut params, &config, &mut rng);
        Ok(NeuralProcess {
            config,
            params,
            embedder,
            trunk,
            head,
        })
    }

    /// Model with the given configuration and externally loaded parameters.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let names_match = model.params.len() == params.len()
            && model
                .params
                .iter()
                .zip(params.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !names_match {
            return contract(format!(
                "parameters do not match a {} / {} model layout",
                model.config.variant, model.config.head
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn embedder(&self) -> &Mlp {
        &self.embedder
    }

    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        self.params.bind(g)
    }

    fn embed(&self, g: &mut Graph, p: &BoundParams, x: Var, y: Option<Var>) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.config.x_dim {
            return contract(format!("inputs {s:?} do not match x_dim {}", self.config.x_dim));
        }
        let (b, n) = (s[0], s[1]);
        if n == 0 {
            return contract("empty point set");
        }
        let (y, flag) = match y {
            Some(y) => {
                let sy = g.shape(y);
                if sy != [b, n, self.config.y_dim] {
                    return contract(format!("outputs {sy:?} do not match inputs {s:?}"));
                }
                (y, 1.0)
            }
            None => (g.input(Tensor::zeros([b, n, self.config.y_dim])), 0.0),
        };
        let flag = g.input(Tensor::full([b, n, 1], flag));
        let features = g.concat(&[x, y, flag], 2)?;
        self.embedder.forward(g, p, features)
    }

    /// Context tokens `MLP([x ‖ y ‖ 1])`, `[B, N, d]`.
    pub fn embed_context(&self, g: &mut Graph, p: &BoundParams, x_c: Var, y_c: Var) -> Result<Var> {
        self.embed(g, p, x_c, Some(y_c))
    }

    /// Target tokens `MLP([x ‖ 0 ‖ 0])` with the context embedder's weights.
    pub fn embed_query(&self, g: &mut Graph, p: &BoundParams, x_t: Var) -> Result<Var> {
        self.embed(g, p, x_t, None)
    }

    pub fn condition(&self, g: &mut Graph, p: &BoundParams, context_tokens: Var) -> Result<ConditionedState> {
        self.trunk.condition(g, p, context_tokens)
    }

    pub fn query(&self, g: &mut Graph, p: &BoundParams, state: &ConditionedState, query_tokens: Var) -> Result<Var> {
        self.trunk.query(g, p, state, query_tokens)
    }

    pub fn predict_head(&self, g: &mut Graph, p: &BoundParams, embeddings: Var) -> Result<Prediction> {
        self.head.forward(g, p, embeddings)
    }

    /// Embed and condition on a context set.
    pub fn condition_on(&self, g: &mut Graph, p: &BoundParams, x_c: &Tensor, y_c: &Tensor) -> Result<ConditionedState> {
        let x = g.input(x_c.clone());
        let y = g.input(y_c.clone());
        let tokens = self.embed_context(g, p, x, y)?;
        self.condition(g, p, tokens)
    }

    /// Predict targets `x_t` from an existing conditioned state.
    pub fn query_from(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        state: &ConditionedState,
        x_t: &Tensor,
    ) -> Result<Prediction> {
        let x = g.input(x_t.clone());
        let tokens = self.embed_query(g, p, x)?;
        let emb = self.query(g, p, state, tokens)?;
        self.predict_head(g, p, emb)
    }

    /// Full conditional prediction for a task batch.
    pub fn predict(&self, g: &mut Graph, p: &BoundParams, batch: &TaskBatch) -> Result<Prediction> {
        let state = self.condition_on(g, p, &batch.x_c, &batch.y_c)?;
        self.query_from(g, p, &state, &batch.x_t)
    }

    /// Prediction values on a gradient-free graph.
    pub fn predict_values(&self, batch: &TaskBatch) -> Result<GaussianPrediction> {
        let mut g = Graph::no_grad();
        let p = self.bind(&mut g);
        let pred = self.predict(&mut g, &p, batch)?;
        Ok(pred.values(&g))
    }
}
