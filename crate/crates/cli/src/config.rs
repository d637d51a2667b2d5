//! Flat JSON run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use amlp::losses::{AggregationMode, LossConfig};
use amlp::masking::{MaskSchedule, MaskStrategy, ScheduleMode};
use amlp::metrics::MetricConfig;
use amlp::synthdata::SynthConfig;
use amlp::trainer::{ClusterInput, EvalTarget, ExperimentConfig, FinetuneConfig, ModelOptions, PretrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub label_fraction: f64,

    pub image_side: usize,
    pub patch_side: usize,
    pub lesion_count_min: usize,
    pub lesion_count_max: usize,
    pub lesion_radius_min: usize,
    pub lesion_radius_max: usize,
    pub lesion_intensity_min: f64,
    pub lesion_intensity_max: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub texture_scale: f64,
    pub patch_label_threshold: usize,

    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub neighbor_context: bool,

    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub strategy: MaskStrategy,
    pub cluster_input: ClusterInput,
    pub recluster_every: usize,
    pub label_update_every: usize,
    pub mask_seed: Option<u64>,
    pub loss_on_all_patches: bool,
    pub temperature: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,

    pub sigma0: f64,
    pub tau: f64,
    pub sigma_max: f64,
    pub schedule_mode: ScheduleMode,

    pub xi: f64,
    pub aggregation_mode: AggregationMode,

    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_weight_decay: f64,
    pub freeze_encoder: bool,
    pub threshold: f64,

    pub epsilon: f64,
    pub boundary_width: usize,
    pub hd_percentile: f64,
    pub eval_target: EvalTarget,

    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let m = ModelOptions::default();
        let p = PretrainConfig::default();
        let f = FinetuneConfig::default();
        let mc = MetricConfig::default();
        Self {
            seed: 0,
            n_samples: 200,
            label_fraction: 0.05,
            image_side: s.image_side,
            patch_side: s.patch_side,
            lesion_count_min: s.lesion_count_min,
            lesion_count_max: s.lesion_count_max,
            lesion_radius_min: s.lesion_radius_min,
            lesion_radius_max: s.lesion_radius_max,
            lesion_intensity_min: s.lesion_intensity_min,
            lesion_intensity_max: s.lesion_intensity_max,
            noise_mean: s.noise_mean,
            noise_std: s.noise_std,
            texture_scale: s.texture_scale,
            patch_label_threshold: s.patch_label_threshold,
            hidden_dim: m.hidden_dim,
            embed_dim: m.embed_dim,
            neighbor_context: m.neighbor_context,
            pretrain_epochs: p.epochs,
            batch_size: p.batch_size,
            pretrain_lr: p.lr,
            pretrain_weight_decay: p.weight_decay,
            strategy: p.strategy,
            cluster_input: p.cluster_input,
            recluster_every: p.recluster_every,
            label_update_every: p.label_update_every,
            mask_seed: None,
            loss_on_all_patches: p.loss_on_all_patches,
            temperature: p.temperature,
            kmeans_restarts: p.kmeans_restarts,
            kmeans_max_iter: p.kmeans_max_iter,
            kmeans_tol: p.kmeans_tol,
            sigma0: p.schedule.sigma0,
            tau: p.schedule.tau,
            sigma_max: p.schedule.sigma_max,
            schedule_mode: p.schedule.mode,
            xi: p.loss.xi,
            aggregation_mode: p.loss.aggregation_mode,
            finetune_epochs: f.epochs,
            finetune_lr: f.lr,
            finetune_weight_decay: f.weight_decay,
            freeze_encoder: f.freeze_encoder,
            threshold: f.threshold,
            epsilon: mc.epsilon,
            boundary_width: mc.boundary_width,
            hd_percentile: mc.hd_percentile,
            eval_target: EvalTarget::default(),
            ablation_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// `(key, description)` for every key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for data generation, initialisation, clustering and label draws"),
    ("n_samples", "number of synthetic images"),
    ("label_fraction", "fraction of images whose labels are used for fine-tuning"),
    ("image_side", "image height and width in pixels"),
    ("patch_side", "patch height and width in pixels"),
    ("lesion_count_min", "fewest lesions per image"),
    ("lesion_count_max", "most lesions per image"),
    ("lesion_radius_min", "smallest lesion radius in pixels"),
    ("lesion_radius_max", "largest lesion radius in pixels"),
    ("lesion_intensity_min", "darkest lesion intensity"),
    ("lesion_intensity_max", "brightest lesion intensity"),
    ("noise_mean", "background mean intensity"),
    ("noise_std", "background standard deviation"),
    ("texture_scale", "background texture smoothing radius in pixels (0 = white noise)"),
    ("patch_label_threshold", "lesion pixels needed for a foreground patch"),
    ("hidden_dim", "autoencoder hidden width"),
    ("embed_dim", "patch embedding width"),
    ("neighbor_context", "decoder sees the mean embedding of the 4 neighbouring patches"),
    ("pretrain_epochs", "pretraining epochs"),
    ("batch_size", "images per optimizer step"),
    ("pretrain_lr", "pretraining learning rate"),
    ("pretrain_weight_decay", "pretraining decoupled weight decay"),
    ("strategy", "easy_to_hard | hard_to_easy | random"),
    ("cluster_input", "pixels | embeddings"),
    ("recluster_every", "epochs between re-clustering (embeddings input)"),
    ("label_update_every", "epochs between label updates"),
    ("mask_seed", "seed of the random masking strategy (null = seed)"),
    ("loss_on_all_patches", "reconstruction loss on every patch instead of masked ones"),
    ("temperature", "softmax temperature of the foreground probability"),
    ("kmeans_restarts", "k-means restarts per image"),
    ("kmeans_max_iter", "k-means iteration cap"),
    ("kmeans_tol", "k-means convergence tolerance"),
    ("sigma0", "initial masking ratio"),
    ("tau", "masking ratio growth constant"),
    ("sigma_max", "masking ratio cap"),
    ("schedule_mode", "fixed_tau | target_final"),
    ("xi", "log offset of the category consistency loss"),
    ("aggregation_mode", "weighted | literal"),
    ("finetune_epochs", "fine-tuning epochs"),
    ("finetune_lr", "fine-tuning base learning rate (cosine decay)"),
    ("finetune_weight_decay", "fine-tuning decoupled weight decay"),
    ("freeze_encoder", "train only the head during fine-tuning"),
    ("threshold", "foreground probability threshold"),
    ("epsilon", "metric smoothing constant"),
    ("boundary_width", "boundary band reach in pixels"),
    ("hd_percentile", "surface distance percentile"),
    ("eval_target", "patch_blocks | pixel_mask"),
    ("ablation_seeds", "seeds of the masking-strategy ablation"),
];

/// Key table with defaults, for `--help`.
pub fn keys_help() -> String {
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut out = String::from("Config keys (JSON object; unknown keys are rejected):\n");
    for (key, doc) in KEYS {
        out.push_str(&format!("  {key:<24} {:<14} {doc}\n", defaults[key].to_string()));
    }
    out
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.experiment().validate().map_err(Failure::from)?;
        cfg.synth().validate().map_err(Failure::from)?;
        if !(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0) {
            return Err(Failure::config("label_fraction must lie in (0, 1]"));
        }
        if cfg.ablation_seeds.is_empty() {
            return Err(Failure::config("ablation_seeds must not be empty"));
        }
        Ok(cfg)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            image_side: self.image_side,
            patch_side: self.patch_side,
            lesion_count_min: self.lesion_count_min,
            lesion_count_max: self.lesion_count_max,
            lesion_radius_min: self.lesion_radius_min,
            lesion_radius_max: self.lesion_radius_max,
            lesion_intensity_min: self.lesion_intensity_min,
            lesion_intensity_max: self.lesion_intensity_max,
            noise_mean: self.noise_mean,
            noise_std: self.noise_std,
            texture_scale: self.texture_scale,
            patch_label_threshold: self.patch_label_threshold,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelOptions {
                hidden_dim: self.hidden_dim,
                embed_dim: self.embed_dim,
                neighbor_context: self.neighbor_context,
            },
            pretrain: PretrainConfig {
                epochs: self.pretrain_epochs,
                batch_size: self.batch_size,
                lr: self.pretrain_lr,
                weight_decay: self.pretrain_weight_decay,
                schedule: MaskSchedule {
                    sigma0: self.sigma0,
                    tau: self.tau,
                    sigma_max: self.sigma_max,
                    mode: self.schedule_mode,
                    total_epochs: self.pretrain_epochs,
                },
                strategy: self.strategy,
                cluster_input: self.cluster_input,
                recluster_every: self.recluster_every,
                label_update_every: self.label_update_every,
                seed: self.seed,
                mask_seed: self.mask_seed.unwrap_or(self.seed),
                loss_on_all_patches: self.loss_on_all_patches,
                temperature: self.temperature,
                kmeans_restarts: self.kmeans_restarts,
                kmeans_max_iter: self.kmeans_max_iter,
                kmeans_tol: self.kmeans_tol,
                loss: LossConfig { xi: self.xi, aggregation_mode: self.aggregation_mode },
            },
            finetune: FinetuneConfig {
                epochs: self.finetune_epochs,
                lr: self.finetune_lr,
                weight_decay: self.finetune_weight_decay,
                freeze_encoder: self.freeze_encoder,
                seed: self.seed,
                threshold: self.threshold,
            },
            metrics: MetricConfig {
                epsilon: self.epsilon,
                boundary_width: self.boundary_width,
                hd_percentile: self.hd_percentile,
            },
            eval_target: self.eval_target,
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir_name(&self) -> String {
        format!("run-{}-seed{}", self.hash(), self.seed)
    }
}
