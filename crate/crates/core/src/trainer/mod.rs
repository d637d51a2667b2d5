//! Pretraining, fine-tuning, evaluation and the masking-strategy ablation.

mod ablation;
mod config;
mod evaluate;
mod finetune;
mod pretrain;
mod report;

pub use ablation::{ablate_masking, run_pipeline, PipelineRun};
pub use config::{ClusterInput, EvalTarget, ExperimentConfig, FinetuneConfig, ModelOptions, PretrainConfig};
pub use evaluate::{evaluate, evaluate_predictions};
pub use finetune::{finetune, FinetunedModel};
pub use pretrain::{initial_model, pretrain, Pretrainer};
pub use report::{
    mean_std, steps_jsonl, AblationRow, AblationTable, EpochTrace, FinetuneEpoch, MetricMeans, MetricsTable, RunReport,
    StepRecord,
};
