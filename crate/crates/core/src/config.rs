//! Run configuration: one JSON document, every field defaulted and
//! documented in the README.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{dataset_from_idx_pair, split_blobs, BlobSpec, SplitDataset};
use crate::error::{Error, Result};
use crate::layer::{Activation, Network};
use crate::objective::ThresholdScope;
use crate::quant::DeltaUpdateMode;
use crate::rng::Rng;
use crate::schedule::{LrSchedule, SparsitySchedule};

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs with a deterministic 80/20 split.
    Blobs(BlobSpec),
    /// Paired IDX files for train and test splits.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: SparsitySchedule,
    /// Plain hyperspherical task training before the regularized phase;
    /// produces the full-precision baseline the later phases start from.
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: u64,
    #[serde(default = "default_quantize_epochs")]
    pub quantize_epochs: u64,
    /// Sparsity target whose magnitude percentile initializes the
    /// learnable threshold when quantization starts.
    #[serde(default = "default_delta_init_t")]
    pub delta_init_t: f64,
    #[serde(default)]
    pub delta_update_mode: DeltaUpdateMode,
    /// The threshold learning rate is this fraction of the running task
    /// learning rate.
    #[serde(default = "default_delta_lr_scale")]
    pub delta_lr_scale: f64,
    #[serde(default)]
    pub threshold_scope: ThresholdScope,
    /// Disable to run the ablation with the re-scaling factor replaced by 1.
    #[serde(default = "default_true")]
    pub ste_rescale: bool,
    /// Dimension chain input -> hidden ... -> output.
    pub layer_dims: Vec<usize>,
    /// One activation per layer; defaults to relu everywhere except an
    /// identity output layer.
    #[serde(default)]
    pub activations: Option<Vec<Activation>>,
    /// One flag per layer; defaults to skipping the first and last layers.
    #[serde(default)]
    pub quantize_eligible: Option<Vec<bool>>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub dataset: DatasetSpec,
}

fn default_seed() -> u64 {
    42
}

fn default_batch_size() -> usize {
    256
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_pretrain_epochs() -> u64 {
    30
}

fn default_quantize_epochs() -> u64 {
    50
}

fn default_delta_init_t() -> f64 {
    0.65
}

fn default_delta_lr_scale() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_threads() -> usize {
    1
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(
                "layer_dims needs at least an input and an output dimension".to_string(),
            ));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer_dims entries must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".to_string()));
        }
        if !(self.delta_init_t > 0.0 && self.delta_init_t < 1.0) {
            return Err(Error::Config(format!(
                "delta_init_t must lie in (0, 1), got {}",
                self.delta_init_t
            )));
        }
        self.schedule.validate().map_err(Error::Config)?;
        let n_layers = self.layer_dims.len() - 1;
        if let Some(acts) = &self.activations {
            if acts.len() != n_layers {
                return Err(Error::Config(format!(
                    "activations has {} entries for {} layers",
                    acts.len(),
                    n_layers
                )));
            }
        }
        if let Some(elig) = &self.quantize_eligible {
            if elig.len() != n_layers {
                return Err(Error::Config(format!(
                    "quantize_eligible has {} entries for {} layers",
                    elig.len(),
                    n_layers
                )));
            }
        }
        if let DatasetSpec::Blobs(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// The per-layer activation list, applying the default when unset.
    pub fn layer_activations(&self) -> Vec<Activation> {
        let n_layers = self.layer_dims.len() - 1;
        match &self.activations {
            Some(a) => a.clone(),
            None => (0..n_layers)
                .map(|k| {
                    if k + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    }
                })
                .collect(),
        }
    }

    /// Builds the freshly initialized network for this config.
    pub fn build_network(&self, rng: &mut Rng) -> Result<Network> {
        let mut net = Network::random(
            &self.layer_dims,
            &self.layer_activations(),
            self.quantize_eligible.as_deref(),
            rng,
        )?;
        for layer in net.layers_mut() {
            layer.set_ste_rescale(self.ste_rescale);
        }
        Ok(net)
    }

    /// Loads the train/test pair named by the dataset spec.
    pub fn load_dataset(&self) -> Result<SplitDataset> {
        match &self.dataset {
            DatasetSpec::Blobs(spec) => split_blobs(spec),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = dataset_from_idx_pair(
                    &std::fs::read(train_images)?,
                    &std::fs::read(train_labels)?,
                )?;
                let test = dataset_from_idx_pair(
                    &std::fs::read(test_images)?,
                    &std::fs::read(test_labels)?,
                )?;
                if train.feature_dim != test.feature_dim {
                    return Err(Error::Config(format!(
                        "train feature dim {} != test feature dim {}",
                        train.feature_dim, test.feature_dim
                    )));
                }
                Ok(SplitDataset { train, test })
            }
        }
    }
}
