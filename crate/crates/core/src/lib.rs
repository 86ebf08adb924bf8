//! Training and inference engine for hyperspherical ternary quantization.
//!
//! The pipeline fine-tunes full-precision networks whose weight columns
//! and inputs live on the unit sphere, pulls the weights toward their
//! ternary projections with a cosine-distance regularizer over a rising
//! sparsity schedule, quantizes them with a scaled straight-through
//! estimator and a learnable threshold, and exports 2-bit packed models
//! whose forward pass needs no multiplications inside the matvec.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inspect;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod objective;
pub mod packed;
pub mod quant;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use config::{DatasetSpec, TrainConfig};
pub use error::{Error, Result};
pub use layer::{Activation, HyperLayer, LayerMode, Network};
pub use matrix::Matrix;
pub use packed::{InferenceModel, PackedTernaryMatrix};
pub use quant::TernaryColumnSet;
pub use rng::Rng;
pub use trainer::RunState;
