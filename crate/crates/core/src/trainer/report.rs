use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::masking::MaskStrategy;
use crate::metrics::SampleMetrics;

/// Means over the images of one pretraining epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub sigma: f64,
    pub n_masked: usize,
    /// Reconstruction loss over the patches that enter the loss.
    pub l_pred: f64,
    /// Reconstruction loss over masked patches only.
    pub l_pred_masked: f64,
    pub l_rrl: f64,
    pub l_lcl: f64,
    pub l_all_report: f64,
    pub l_all_grad: f64,
    pub labels_changed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    pub train_accuracy: f64,
}

/// One optimizer step, for the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: String,
    pub epoch: usize,
    pub step: u64,
    pub images: Vec<usize>,
    pub lr: f64,
    pub loss_report: f64,
    pub loss_grad: f64,
}

pub fn steps_jsonl(steps: &[StepRecord]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&serde_json::to_string(s).expect("step records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub dsc: f64,
    pub sen: f64,
    pub biou: f64,
    /// Mean over samples where the distance is defined.
    pub hd95: Option<f64>,
    pub hd95_undefined: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<SampleMetrics>,
    pub means: MetricMeans,
}

impl MetricsTable {
    pub fn from_rows(rows: Vec<SampleMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let defined: Vec<f64> = rows.iter().filter_map(|r| r.hd95).collect();
        let means = MetricMeans {
            dsc: rows.iter().map(|r| r.dsc).sum::<f64>() / n,
            sen: rows.iter().map(|r| r.sen).sum::<f64>() / n,
            biou: rows.iter().map(|r| r.biou).sum::<f64>() / n,
            hd95: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            hd95_undefined: rows.len() - defined.len(),
        };
        Self { rows, means }
    }
}

/// Everything a run produces except wall-clock time, which is kept out of the
/// serialized form so that reruns are byte-identical.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: Value,
    pub pretrain: Vec<EpochTrace>,
    pub sigma_trace: Vec<f64>,
    pub labels_changed: Vec<usize>,
    pub finetune: Vec<FinetuneEpoch>,
    pub metrics: Option<MetricsTable>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn pretrain_csv(&self) -> String {
        let mut out =
            String::from("epoch,sigma,n_masked,l_pred,l_pred_masked,l_rrl,l_lcl,l_all_report,l_all_grad,labels_changed\n");
        for t in &self.pretrain {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                t.epoch,
                t.sigma,
                t.n_masked,
                t.l_pred,
                t.l_pred_masked,
                t.l_rrl,
                t.l_lcl,
                t.l_all_report,
                t.l_all_grad,
                t.labels_changed
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn finetune_csv(&self) -> String {
        let mut out = String::from("epoch,lr,bce,train_accuracy\n");
        for t in &self.finetune {
            writeln!(out, "{},{},{},{}", t.epoch, t.lr, t.bce, t.train_accuracy).expect("writing to a String");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: MaskStrategy,
    pub seeds: Vec<u64>,
    pub dsc: Vec<f64>,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub sen_mean: f64,
    pub biou_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Identical across strategies by construction.
    pub sigma_trace: Vec<f64>,
}

impl AblationTable {
    pub fn row(&self, strategy: MaskStrategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,n_seeds,dsc_mean,dsc_std,sen_mean,biou_mean\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.strategy.name(),
                r.seeds.len(),
                r.dsc_mean,
                r.dsc_std,
                r.sen_mean,
                r.biou_mean
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| strategy | DSC (mean ± std) |\n|---|---|\n");
        for r in &self.rows {
            writeln!(out, "| {} | {:.4} ± {:.4} |", r.strategy.name(), r.dsc_mean, r.dsc_std).expect("writing to a String");
        }
        out
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
