use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::error::{NpError, Result};

/// Model family member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Deep-sets mean aggregation with an MLP decoder.
    Cnp,
    /// Masked transformer over concatenated context and targets.
    TnpD,
    /// Context self-attention computed once; targets read it layer by layer.
    Eqtnp,
    /// Fixed latent array absorbs the context; targets read the latents.
    Lbanp,
    /// LBANP whose targets read only the final latent layer.
    LbanpL,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Cnp,
        Variant::TnpD,
        Variant::Eqtnp,
        Variant::Lbanp,
        Variant::LbanpL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cnp => "cnp",
            Variant::TnpD => "tnp-d",
            Variant::Eqtnp => "eqtnp",
            Variant::Lbanp => "lbanp",
            Variant::LbanpL => "lbanp-l",
        }
    }

    pub fn uses_latents(self) -> bool {
        matches!(self, Variant::Lbanp | Variant::LbanpL)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = NpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cnp" => Ok(Variant::Cnp),
            "tnp-d" | "tnpd" => Ok(Variant::TnpD),
            "eqtnp" => Ok(Variant::Eqtnp),
            "lbanp" => Ok(Variant::Lbanp),
            "lbanp-l" => Ok(Variant::LbanpL),
            other => Err(NpError::Config(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Predictive head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Independent Gaussian per target and output dimension.
    Diag,
    /// Full covariance via target self-attention and a Cholesky factor.
    Nd,
    /// Full covariance via a latent bottleneck over the targets.
    End,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Diag => "diag",
            HeadKind::Nd => "nd",
            HeadKind::End => "end",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = NpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diag" => Ok(HeadKind::Diag),
            "nd" => Ok(HeadKind::Nd),
            "end" => Ok(HeadKind::End),
            other => Err(NpError::Config(format!("unknown head '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub head: HeadKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Conditioning depth.
    pub n_layers: usize,
    pub n_latents: usize,
    /// Depth of the latent recursion inside the END head.
    pub n_nd_layers: usize,
    pub n_nd_latents: usize,
    /// Width of the per-output feature vectors whose inner products fill the
    /// strictly-lower Cholesky entries.
    pub nd_features: usize,
    pub std_floor: f64,
    pub x_dim: usize,
    pub y_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Lbanp,
            head: HeadKind::Diag,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            n_layers: 6,
            n_latents: 8,
            n_nd_layers: 2,
            n_nd_latents: 8,
            nd_features: 16,
            std_floor: 0.01,
            x_dim: 1,
            y_dim: 1,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, head: HeadKind) -> Self {
        ModelConfig {
            variant,
            head,
            ..Self::default()
        }
    }

    pub fn with_dims(mut self, x_dim: usize, y_dim: usize) -> Self {
        self.x_dim = x_dim;
        self.y_dim = y_dim;
        self
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.x_dim == 0 || self.y_dim == 0 {
            return Err(NpError::Config("x_dim and y_dim must be positive".into()));
        }
        if self.n_layers == 0 {
            return Err(NpError::Config("n_layers must be at least 1".into()));
        }
        if self.variant.uses_latents() && self.n_latents == 0 {
            return Err(NpError::Config(format!("{} needs n_latents >= 1", self.variant)));
        }
        if self.head != HeadKind::Diag && self.variant == Variant::Cnp {
            return Err(NpError::Config("cnp supports only the diag head".into()));
        }
        if self.head == HeadKind::End && (self.n_nd_layers == 0 || self.n_nd_latents == 0) {
            return Err(NpError::Config("end head needs n_nd_layers and n_nd_latents >= 1".into()));
        }
        if self.head != HeadKind::Diag && self.nd_features == 0 {
            return Err(NpError::Config("nd_features must be positive".into()));
        }
        if !(self.std_floor >= 0.0) {
            return Err(NpError::Config("std_floor must be non-negative".into()));
        }
        Ok(())
    }
}
