use std::time::Instant;

use serde_json::json;

use crate::error::{invalid, Result};
use crate::model::{cosine_lr, AdamWConfig, AdamWState, Checkpoint, MlpAutoencoder, SegHead};
use crate::numerics::{Rng, Scalar, Tensor};
use crate::synthdata::Dataset;

use super::config::FinetuneConfig;
use super::pretrain::{check_geometry, patch_matrices};
use super::report::{FinetuneEpoch, RunReport, StepRecord};

/// Encoder plus patch-classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunedModel<T: Scalar = f64> {
    pub model: MlpAutoencoder<T>,
    pub head: SegHead<T>,
}

impl<T: Scalar> FinetunedModel<T> {
    /// Foreground probability of every patch of `patches`.
    pub fn predict_proba(&self, patches: &Tensor<T>) -> Result<Vec<f64>> {
        let (emb, _) = self.model.encode(patches, &vec![false; patches.rows()])?;
        Ok(self.head.probabilities(&emb)?.into_iter().map(Scalar::as_f64).collect())
    }

    pub fn predict_labels(&self, patches: &Tensor<T>, threshold: f64) -> Result<Vec<u8>> {
        Ok(self.predict_proba(patches)?.into_iter().map(|p| u8::from(p >= threshold)).collect())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(meta, 0, 0);
        ck.put_model(&self.model)?;
        ck.put_head(&self.head);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self { model: ck.model()?, head: ck.head()? })
    }
}

/// Trains a fresh head (and, unless frozen, the encoder) with binary
/// cross-entropy on the patch labels of `subset`, one image per step.
pub fn finetune<T: Scalar>(
    model: MlpAutoencoder<T>,
    dataset: &Dataset,
    subset: &[usize],
    config: &FinetuneConfig,
) -> Result<(FinetunedModel<T>, RunReport, Vec<StepRecord>)> {
    let start = Instant::now();
    config.validate()?;
    check_geometry(&model, dataset)?;
    if subset.is_empty() {
        return Err(invalid("fine-tuning needs at least one labeled sample"));
    }
    let patches = patch_matrices::<T>(dataset, subset)?;
    let labels: Vec<&[u8]> = subset.iter().map(|&k| dataset.samples[k].patch_labels.as_slice()).collect();

    let mut model = model;
    let mut head = SegHead::new(model.config.embed_dim, &mut Rng::new(config.seed).split("head"))?;
    let adam = AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() };
    let mut head_opt = AdamWState::new(adam, &head.parameters());
    let n_enc = model.encoder_parameter_count();
    let mut enc_opt = AdamWState::new(adam, &model.parameters()[..n_enc]);

    let total_steps = config.epochs * subset.len();
    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::with_capacity(total_steps);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..subset.len()).collect();
        Rng::new(config.seed).split_with("finetune-order", &[epoch as u64]).shuffle(&mut order);
        let (mut bce_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut last_lr = 0.0;
        for &i in &order {
            let x = &patches[i];
            let (emb, cache) = model.encode(x, &vec![false; x.rows()])?;
            let logits = head.logits(&emb)?;
            let bce = SegHead::bce(&logits, labels[i])?;
            let threshold_logit = T::of((config.threshold / (1.0 - config.threshold)).ln());
            correct += logits.iter().zip(labels[i]).filter(|(&l, &y)| u8::from(l >= threshold_logit) == y).count();
            seen += logits.len();
            bce_sum += bce.as_f64();

            let lr = cosine_lr(step, total_steps, config.lr)?;
            let (head_grads, d_emb) = head.bce_backward(&emb, &logits, labels[i])?;
            head_opt.step(head.parameters_mut(), &head_grads, lr)?;
            if !config.freeze_encoder {
                let g = model.encode_backward(&cache, &d_emb)?;
                let params: Vec<&mut Tensor<T>> = model.parameters_mut().into_iter().take(n_enc).collect();
                enc_opt.step(params, &g.tensors[..n_enc], lr)?;
            }
            step += 1;
            last_lr = lr;
            steps.push(StepRecord {
                phase: "finetune".into(),
                epoch,
                step: step as u64,
                images: vec![subset[i]],
                lr,
                loss_report: bce.as_f64(),
                loss_grad: bce.as_f64(),
            });
        }
        epochs.push(FinetuneEpoch {
            epoch,
            lr: last_lr,
            bce: bce_sum / subset.len() as f64,
            train_accuracy: correct as f64 / seen as f64,
        });
    }
    let report = RunReport {
        seed: config.seed,
        config: json!({ "finetune": config }),
        finetune: epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        ..RunReport::default()
    };
    Ok((FinetunedModel { model, head }, report, steps))
}
