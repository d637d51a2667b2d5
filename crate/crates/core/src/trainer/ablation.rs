use std::time::Instant;

use serde_json::json;

use crate::error::{invalid, Result};
use crate::masking::MaskStrategy;
use crate::numerics::Scalar;
use crate::synthdata::Dataset;

use super::config::ExperimentConfig;
use super::evaluate::evaluate;
use super::finetune::{finetune, FinetunedModel};
use super::pretrain::{initial_model, Pretrainer};
use super::report::{mean_std, AblationRow, AblationTable, RunReport, StepRecord};

/// Output of one pipeline run.
pub struct PipelineRun<T: Scalar = f64> {
    pub model: FinetunedModel<T>,
    pub report: RunReport,
    pub steps: Vec<StepRecord>,
}

/// Pretrain (unless `pretrain` is false), fine-tune on the labeled subset,
/// then evaluate on the test split.
pub fn run_pipeline<T: Scalar>(
    dataset: &Dataset,
    config: &ExperimentConfig,
    pretrain: bool,
    workers: Option<usize>,
) -> Result<PipelineRun<T>> {
    let start = Instant::now();
    config.validate()?;
    if dataset.test.is_empty() {
        return Err(invalid("evaluation needs a non-empty test split"));
    }
    let init = initial_model::<T>(dataset, &config.model, config.pretrain.seed)?;
    let mut report = RunReport { seed: config.pretrain.seed, config: json!(config), ..RunReport::default() };
    let mut steps = Vec::new();
    let encoder = if pretrain {
        let mut trainer = Pretrainer::new(dataset, init, config.pretrain)?;
        trainer.set_workers(workers)?;
        trainer.run()?;
        let pre = trainer.report();
        steps.extend(trainer.drain_steps());
        report.pretrain = pre.pretrain;
        report.sigma_trace = pre.sigma_trace;
        report.labels_changed = pre.labels_changed;
        trainer.into_model()
    } else {
        init
    };
    let (model, ft, ft_steps) = finetune(encoder, dataset, &dataset.labeled, &config.finetune)?;
    steps.extend(ft_steps);
    report.finetune = ft.finetune;
    let table = evaluate(&model, dataset, &dataset.test, config.finetune.threshold, config.eval_target, &config.metrics)?;
    report.metrics = Some(table);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(PipelineRun { model, report, steps })
}

/// Full pipeline for every masking strategy and seed, holding all other settings fixed.
pub fn ablate_masking<T: Scalar>(
    dataset: &Dataset,
    base: &ExperimentConfig,
    seeds: &[u64],
    workers: Option<usize>,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(invalid("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    let mut sigma_trace = Vec::new();
    for strategy in MaskStrategy::ALL {
        let (mut dsc, mut sen, mut biou) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in seeds {
            let mut cfg = base.with_seed(seed);
            cfg.pretrain.strategy = strategy;
            let run = run_pipeline::<T>(dataset, &cfg, true, workers)?;
            let means = run.report.metrics.as_ref().expect("pipeline evaluates").means.clone();
            dsc.push(means.dsc);
            sen.push(means.sen);
            biou.push(means.biou);
            sigma_trace = run.report.sigma_trace;
        }
        let (dsc_mean, dsc_std) = mean_std(&dsc);
        rows.push(AblationRow {
            strategy,
            seeds: seeds.to_vec(),
            dsc,
            dsc_mean,
            dsc_std,
            sen_mean: mean_std(&sen).0,
            biou_mean: mean_std(&biou).0,
        });
    }
    Ok(AblationTable { rows, sigma_trace })
}
