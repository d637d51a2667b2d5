use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use crate::clustering::{assign, kmeans_fit_restarts, rank_by_foreground_prob, soft_assignment_backward};
use crate::clustering::{ClusterAssignment, ClusterModel};
use crate::error::{invalid, shape_err, Error, Result};
use crate::losses::{
    attention_weights, category_consistency, category_consistency_grad, per_patch_l2, reconstruction_grad, total_loss,
    update_labels,
};
use crate::masking::{apply_mask, build_mask_plan, masking_ratio};
use crate::model::{AdamWConfig, AdamWState, Checkpoint, Gradients, MlpAutoencoder, ModelConfig};
use crate::numerics::{Rng, Scalar, Tensor};
use crate::patches::partition;
use crate::synthdata::Dataset;

use super::config::{ClusterInput, ModelOptions, PretrainConfig};
use super::report::{EpochTrace, RunReport, StepRecord};

/// Freshly initialised autoencoder sized for `dataset`.
pub fn initial_model<T: Scalar>(dataset: &Dataset, options: &ModelOptions, seed: u64) -> Result<MlpAutoencoder<T>> {
    let side = dataset.config.patch_side;
    let grid = dataset.config.grid_side();
    let config = ModelConfig {
        hidden_dim: options.hidden_dim,
        embed_dim: options.embed_dim,
        neighbor_context: options.neighbor_context,
        ..ModelConfig::new(side * side, grid, grid)
    };
    MlpAutoencoder::new(config, &mut Rng::new(seed).split("init"))
}

/// Patch matrices of the samples at `indices`.
pub(crate) fn patch_matrices<T: Scalar>(dataset: &Dataset, indices: &[usize]) -> Result<Vec<Tensor<T>>> {
    indices
        .iter()
        .map(|&k| {
            let s = dataset.samples.get(k).ok_or_else(|| invalid(format!("sample {k} does not exist")))?;
            Ok(partition(&s.image, dataset.config.patch_side)?.matrix.cast())
        })
        .collect()
}

pub(crate) fn check_geometry<T: Scalar>(model: &MlpAutoencoder<T>, dataset: &Dataset) -> Result<()> {
    let side = dataset.config.patch_side;
    let grid = dataset.config.grid_side();
    let c = &model.config;
    if c.patch_dim != side * side || c.grid_rows != grid || c.grid_cols != grid {
        return Err(shape_err(format!(
            "model expects {}-pixel patches on a {}x{} grid, dataset has {}-pixel patches on {grid}x{grid}",
            c.patch_dim,
            c.grid_rows,
            c.grid_cols,
            side * side
        )));
    }
    Ok(())
}

pub(crate) fn worker_pool(workers: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    workers
        .map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))
        })
        .transpose()
}

struct ImageOutcome<T: Scalar> {
    grads: Option<Gradients<T>>,
    l_pred: f64,
    l_pred_masked: f64,
    l_rrl: f64,
    l_lcl: f64,
    report: f64,
    grad: f64,
    n_masked: usize,
    changed: usize,
    refit: Option<Option<ClusterModel<T>>>,
}

fn mean_f64<T: Scalar>(v: impl Iterator<Item = T>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x.as_f64(), n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Resumable pretraining loop. All randomness is derived from
/// `(seed, purpose, epoch, image)` so an epoch's work does not depend on
/// how earlier epochs were scheduled or interrupted.
pub struct Pretrainer<T: Scalar = f64> {
    config: PretrainConfig,
    model: MlpAutoencoder<T>,
    optimizer: AdamWState<T>,
    epochs_done: usize,
    image_ids: Vec<usize>,
    patches: Vec<Tensor<T>>,
    clusters: Vec<Option<ClusterModel<T>>>,
    traces: Vec<EpochTrace>,
    steps: Vec<StepRecord>,
    pool: Option<rayon::ThreadPool>,
}

impl<T: Scalar> Pretrainer<T> {
    pub fn new(dataset: &Dataset, model: MlpAutoencoder<T>, config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        check_geometry(&model, dataset)?;
        if dataset.train.is_empty() {
            return Err(invalid("pretraining needs a non-empty training split"));
        }
        let adam = AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() };
        let optimizer = AdamWState::new(adam, &model.parameters());
        let image_ids = dataset.train.clone();
        let patches = patch_matrices(dataset, &image_ids)?;
        let mut this = Self {
            config,
            model,
            optimizer,
            epochs_done: 0,
            clusters: vec![None; image_ids.len()],
            image_ids,
            patches,
            traces: Vec::new(),
            steps: Vec::new(),
            pool: None,
        };
        if config.cluster_input == ClusterInput::Pixels {
            for pos in 0..this.patches.len() {
                this.clusters[pos] = this.fit_clusters(&this.patches[pos], 0, pos)?;
            }
        }
        Ok(this)
    }

    /// Caps the number of threads used for the images of one batch.
    pub fn set_workers(&mut self, workers: Option<usize>) -> Result<()> {
        self.pool = worker_pool(workers)?;
        Ok(())
    }

    pub fn model(&self) -> &MlpAutoencoder<T> {
        &self.model
    }

    pub fn into_model(self) -> MlpAutoencoder<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.config
    }

    pub fn traces(&self) -> &[EpochTrace] {
        &self.traces
    }

    /// Step records since the last call.
    pub fn drain_steps(&mut self) -> Vec<StepRecord> {
        std::mem::take(&mut self.steps)
    }

    fn stream(&self, seed: u64, tag: &str, epoch: usize, pos: usize) -> Rng {
        Rng::new(seed).split_with(tag, &[epoch as u64, self.image_ids[pos] as u64])
    }

    /// `None` when every vector is identical and no split exists.
    fn fit_clusters(&self, vectors: &Tensor<T>, epoch: usize, pos: usize) -> Result<Option<ClusterModel<T>>> {
        let c = &self.config;
        let rng = self.stream(c.seed, "cluster", epoch, pos);
        match kmeans_fit_restarts(vectors, &rng, c.kmeans_restarts, c.kmeans_max_iter, T::of(c.kmeans_tol)) {
            Ok(m) => Ok(Some(m)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn soft_labels(&self, cluster: Option<&ClusterModel<T>>, vectors: &Tensor<T>) -> Result<ClusterAssignment<T>> {
        match cluster {
            Some(m) => assign(m, vectors, T::of(self.config.temperature)),
            None => Ok(ClusterAssignment::all_background(vectors.rows())),
        }
    }

    fn image_step(&self, epoch: usize, pos: usize) -> Result<ImageOutcome<T>> {
        let c = &self.config;
        let x = &self.patches[pos];
        let n = x.rows();
        let temperature = T::of(c.temperature);

        let mut refit = None;
        let mut clean = None;
        let assignment = match c.cluster_input {
            ClusterInput::Pixels => self.soft_labels(self.clusters[pos].as_ref(), x)?,
            ClusterInput::Embeddings => {
                let (emb, cache) = self.model.encode(x, &vec![false; n])?;
                let cluster = if (epoch - 1) % c.recluster_every == 0 {
                    let fit = self.fit_clusters(&emb, epoch, pos)?;
                    refit = Some(fit.clone());
                    fit
                } else {
                    self.clusters[pos].clone()
                };
                let a = self.soft_labels(cluster.as_ref(), &emb)?;
                clean = Some((emb, cache, cluster));
                a
            }
        };

        let ranking = rank_by_foreground_prob(&assignment);
        let sigma = masking_ratio(epoch, &c.schedule)?;
        let mut mask_rng = self.stream(c.mask_seed, "mask", epoch, pos);
        let plan = build_mask_plan(epoch, &ranking, n, sigma, c.strategy, &mut mask_rng)?;
        let rows: Vec<usize> = if c.loss_on_all_patches {
            (0..n).collect()
        } else {
            let mut r = plan.masked_indices.clone();
            r.sort_unstable();
            r
        };
        let empty = ImageOutcome {
            grads: None,
            l_pred: 0.0,
            l_pred_masked: 0.0,
            l_rrl: 0.0,
            l_lcl: 0.0,
            report: 0.0,
            grad: 0.0,
            n_masked: plan.n_masked,
            changed: 0,
            refit: refit.clone(),
        };
        if rows.is_empty() {
            return Ok(empty);
        }

        let input = apply_mask(x, &plan, &self.model.mask_token)?;
        let (_, recon, cache) = self.model.forward_rows(&input, &plan.mask_flags, &rows)?;
        let target = x.select_rows(&rows)?;
        let l_pred = per_patch_l2(&recon, &target)?;
        let weights = attention_weights(&l_pred)?;

        let label_ori = &assignment.hard_label;
        let mut label_new = label_ori.clone();
        if (epoch - 1) % c.label_update_every == 0 {
            let sub: Vec<u8> = rows.iter().map(|&r| label_ori[r]).collect();
            let mut rng = self.stream(c.seed, "labels", epoch, pos);
            for (&r, v) in rows.iter().zip(update_labels(&sub, &weights, &mut rng)?) {
                label_new[r] = v;
            }
        }
        let xi = T::of(c.loss.xi);
        let l_lcl = category_consistency(label_ori, &assignment.p_fg, &label_new, true, xi)?;
        let total = total_loss(&l_pred, &weights, l_lcl, &c.loss)?;
        if !total.report.is_finite() || !total.grad.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch}, image {}: mean l_pred {}, l_lcl {}, l_all {}",
                self.image_ids[pos],
                mean_f64(l_pred.iter().copied()),
                l_lcl,
                total.report
            )));
        }

        let d_recon = reconstruction_grad(&recon, &target, &weights, c.loss.aggregation_mode)?;
        let mut grads = self.model.backward(&cache, &d_recon, None)?;
        if let Some((emb, enc_cache, Some(cluster))) = &clean {
            let d_soft = category_consistency_grad(label_ori, &assignment.p_fg, &label_new, true, xi)?;
            if d_soft.iter().any(|&g| g != T::zero()) {
                let d_emb = soft_assignment_backward(cluster, &assignment, emb, temperature, &d_soft)?;
                grads.accumulate(&self.model.encode_backward(enc_cache, &d_emb)?)?;
            }
        }

        let masked_losses = rows.iter().zip(&l_pred).filter(|(&r, _)| plan.mask_flags[r]).map(|(_, &l)| l);
        Ok(ImageOutcome {
            grads: Some(grads),
            l_pred: mean_f64(l_pred.iter().copied()),
            l_pred_masked: mean_f64(masked_losses),
            l_rrl: mean_f64(weights.iter().copied()),
            l_lcl: l_lcl.as_f64(),
            report: total.report.as_f64(),
            grad: total.grad.as_f64(),
            changed: label_new.iter().zip(label_ori).filter(|(a, b)| a != b).count(),
            ..empty
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochTrace> {
        let epoch = self.epochs_done + 1;
        let n_img = self.patches.len();
        let mut order: Vec<usize> = (0..n_img).collect();
        Rng::new(self.config.seed).split_with("order", &[epoch as u64]).shuffle(&mut order);

        let mut trace = EpochTrace {
            epoch,
            sigma: masking_ratio(epoch, &self.config.schedule)?,
            n_masked: 0,
            l_pred: 0.0,
            l_pred_masked: 0.0,
            l_rrl: 0.0,
            l_lcl: 0.0,
            l_all_report: 0.0,
            l_all_grad: 0.0,
            labels_changed: 0,
        };
        for batch in order.chunks(self.config.batch_size) {
            let this = &*self;
            let work = || batch.par_iter().map(|&pos| this.image_step(epoch, pos)).collect::<Vec<_>>();
            let outcomes = match &self.pool {
                Some(pool) => pool.install(work),
                None => work(),
            };
            let mut grads = self.model.zero_grads();
            let (mut report, mut grad) = (0.0, 0.0);
            for (&pos, outcome) in batch.iter().zip(outcomes) {
                let o = outcome?;
                if let Some(g) = &o.grads {
                    grads.accumulate(g)?;
                }
                if let Some(fit) = o.refit {
                    self.clusters[pos] = fit;
                }
                trace.n_masked = o.n_masked;
                trace.l_pred += o.l_pred;
                trace.l_pred_masked += o.l_pred_masked;
                trace.l_rrl += o.l_rrl;
                trace.l_lcl += o.l_lcl;
                trace.l_all_report += o.report;
                trace.l_all_grad += o.grad;
                trace.labels_changed += o.changed;
                report += o.report;
                grad += o.grad;
            }
            grads.scale(T::one() / T::of(batch.len() as f64));
            let lr = self.config.lr;
            self.optimizer.step(self.model.parameters_mut(), &grads.tensors, lr)?;
            let k = batch.len() as f64;
            self.steps.push(StepRecord {
                phase: "pretrain".into(),
                epoch,
                step: self.optimizer.step,
                images: batch.iter().map(|&p| self.image_ids[p]).collect(),
                lr,
                loss_report: report / k,
                loss_grad: grad / k,
            });
        }
        let k = n_img as f64;
        for v in [
            &mut trace.l_pred,
            &mut trace.l_pred_masked,
            &mut trace.l_rrl,
            &mut trace.l_lcl,
            &mut trace.l_all_report,
            &mut trace.l_all_grad,
        ] {
            *v /= k;
        }
        self.epochs_done = epoch;
        self.traces.push(trace.clone());
        Ok(trace)
    }

    /// Runs epochs until `config.epochs` have been completed.
    pub fn run(&mut self) -> Result<()> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            seed: self.config.seed,
            config: json!({ "pretrain": self.config }),
            sigma_trace: self.traces.iter().map(|t| t.sigma).collect(),
            labels_changed: self.traces.iter().map(|t| t.labels_changed).collect(),
            pretrain: self.traces.clone(),
            ..RunReport::default()
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(json!({}), self.epochs_done as u64, self.config.seed);
        ck.set_meta("pretrain", serde_json::to_value(self.config)?);
        ck.set_meta("image_ids", serde_json::to_value(&self.image_ids)?);
        ck.set_meta("traces", serde_json::to_value(&self.traces)?);
        ck.put_model(&self.model)?;
        ck.put_optimizer("adam", &self.model.parameter_names(), &self.optimizer)?;
        for (pos, cluster) in self.clusters.iter().enumerate() {
            if let Some(m) = cluster {
                ck.put(format!("cluster.{}", self.image_ids[pos]), &m.centroids);
            }
        }
        Ok(ck)
    }

    /// Restores a run saved by [`Self::to_checkpoint`]; `dataset` must be the one it was trained on.
    pub fn from_checkpoint(ck: &Checkpoint, dataset: &Dataset) -> Result<Self> {
        let field = |key: &str| {
            ck.meta.get(key).cloned().ok_or_else(|| Error::Corrupt(format!("checkpoint metadata lacks {key}")))
        };
        let config: PretrainConfig = serde_json::from_value(field("pretrain")?)?;
        let image_ids: Vec<usize> = serde_json::from_value(field("image_ids")?)?;
        let traces: Vec<EpochTrace> = serde_json::from_value(field("traces")?)?;
        if image_ids != dataset.train {
            return Err(invalid("checkpoint was trained on a different training split"));
        }
        let model: MlpAutoencoder<T> = ck.model()?;
        check_geometry(&model, dataset)?;
        let optimizer = ck.optimizer("adam", &model.parameter_names())?;
        let patches = patch_matrices(dataset, &image_ids)?;
        let clusters = image_ids
            .iter()
            .map(|id| {
                let name = format!("cluster.{id}");
                ck.has(&name).then(|| -> Result<ClusterModel<T>> {
                    let centroids: Tensor<T> = ck.get(&name)?;
                    // only the centroids are needed to resume
                    Ok(ClusterModel {
                        centroids,
                        iterations_run: 0,
                        converged: true,
                        objective: T::zero(),
                        objective_history: vec![],
                    })
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            model,
            optimizer,
            epochs_done: ck.epoch as usize,
            image_ids,
            patches,
            clusters,
            traces,
            steps: Vec::new(),
            pool: None,
        })
    }
}

/// Pretrains `model` on the training split for `config.epochs` epochs.
pub fn pretrain<T: Scalar>(
    dataset: &Dataset,
    model: MlpAutoencoder<T>,
    config: &PretrainConfig,
) -> Result<(MlpAutoencoder<T>, RunReport)> {
    let start = Instant::now();
    let mut trainer = Pretrainer::new(dataset, model, *config)?;
    trainer.run()?;
    let mut report = trainer.report();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((trainer.into_model(), report))
}
