//! Neural processes with latent-bottlenecked attention, their ancestors,
//! task generators, training, bandit evaluation and complexity benchmarks.

pub mod attention;
pub mod bandit;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod params;
pub mod tasks;
pub mod training;

pub use error::{NpError, Result};
pub use models::{GaussianPrediction, HeadKind, ModelConfig, NeuralProcess, Variant};
pub use tasks::{TaskBatch, TaskSource};
