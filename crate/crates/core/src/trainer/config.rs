use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::masking::{MaskSchedule, MaskStrategy};

/// What the per-image k-means runs on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterInput {
    /// Raw patch pixels; fitted once per image.
    #[default]
    Pixels,
    /// Unmasked encoder embeddings; refitted every `recluster_every` epochs.
    Embeddings,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Images whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: MaskSchedule,
    pub strategy: MaskStrategy,
    pub cluster_input: ClusterInput,
    pub recluster_every: usize,
    pub label_update_every: usize,
    pub seed: u64,
    /// Stream for the random masking strategy.
    pub mask_seed: u64,
    pub loss_on_all_patches: bool,
    pub temperature: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub loss: LossConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 1,
            lr: 1e-4,
            weight_decay: 1e-4,
            schedule: MaskSchedule::default(),
            strategy: MaskStrategy::default(),
            cluster_input: ClusterInput::default(),
            recluster_every: 1,
            label_update_every: 1,
            seed: 0,
            mask_seed: 0,
            loss_on_all_patches: false,
            temperature: 0.1,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-9,
            loss: LossConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return bad("pretrain epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.recluster_every < 1 || self.label_update_every < 1 {
            return bad("recluster_every and label_update_every must be at least 1");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.kmeans_restarts < 1 || self.kmeans_max_iter < 1 || !(self.kmeans_tol >= 0.0) {
            return bad("k-means needs restarts >= 1, max_iter >= 1 and tol >= 0");
        }
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub freeze_encoder: bool,
    pub seed: u64,
    /// Probability above which a patch is predicted foreground.
    pub threshold: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 70, lr: 1e-4, weight_decay: 1e-4, freeze_encoder: false, seed: 0, threshold: 0.5 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("finetune epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Autoencoder width options; patch and grid geometry come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub neighbor_context: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { hidden_dim: 64, embed_dim: 32, neighbor_context: true }
    }
}

/// Ground truth that block-expanded patch predictions are scored against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    /// Patch labels expanded to pixel blocks.
    #[default]
    PatchBlocks,
    /// The generator's pixel mask.
    PixelMask,
}

/// Everything needed to run pretrain, fine-tune and evaluate end to end.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelOptions,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub metrics: crate::metrics::MetricConfig,
    pub eval_target: EvalTarget,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.hidden_dim == 0 || self.model.embed_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.metrics.validate()
    }

    /// Same experiment with every seed set to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pretrain.seed = seed;
        self.pretrain.mask_seed = seed;
        self.finetune.seed = seed;
        self
    }
}
