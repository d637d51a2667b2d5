use crate::error::{shape_err, Result};
use crate::metrics::{evaluate_pair, BinaryMask, MetricConfig};
use crate::numerics::Scalar;
use crate::patches::block_expand;
use crate::synthdata::Dataset;

use super::config::EvalTarget;
use super::finetune::FinetunedModel;
use super::pretrain::patch_matrices;
use super::report::MetricsTable;

/// Scores per-patch predictions (one vector per sample of `indices`) at pixel level.
pub fn evaluate_predictions(
    dataset: &Dataset,
    indices: &[usize],
    predictions: &[Vec<u8>],
    target: EvalTarget,
    config: &MetricConfig,
) -> Result<MetricsTable> {
    if predictions.len() != indices.len() {
        return Err(shape_err(format!("{} predictions for {} samples", predictions.len(), indices.len())));
    }
    let side = dataset.config.patch_side;
    let grid = dataset.config.grid_side();
    let expand = |labels: &[u8]| -> Result<BinaryMask> {
        let v: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        BinaryMask::from_tensor(&block_expand(&v, grid, grid, side)?)
    };
    let rows = indices
        .iter()
        .zip(predictions)
        .map(|(&k, pred)| {
            let sample = &dataset.samples[k];
            let gt = match target {
                EvalTarget::PatchBlocks => expand(&sample.patch_labels)?,
                EvalTarget::PixelMask => BinaryMask::from_tensor(&sample.pixel_mask)?,
            };
            evaluate_pair(k, &expand(pred)?, &gt, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable::from_rows(rows))
}

/// Thresholded head predictions on `indices`, scored with [`evaluate_predictions`].
pub fn evaluate<T: Scalar>(
    model: &FinetunedModel<T>,
    dataset: &Dataset,
    indices: &[usize],
    threshold: f64,
    target: EvalTarget,
    config: &MetricConfig,
) -> Result<MetricsTable> {
    let predictions = patch_matrices::<T>(dataset, indices)?
        .iter()
        .map(|x| model.predict_labels(x, threshold))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(dataset, indices, &predictions, target, config)
}
