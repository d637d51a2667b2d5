//! Reconstruction, attention-reweighting and category-consistency losses.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::numerics::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// `mean(L_pred) + mean(L_rrl) + L_lcl`, optimized as written.
    Literal,
    /// `mean(sg(L_rrl)·L_pred) + L_lcl`.
    #[default]
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub xi: f64,
    pub aggregation_mode: AggregationMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { xi: 1e-10, aggregation_mode: AggregationMode::Weighted }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(invalid(format!("xi must be positive, got {}", self.xi)));
        }
        Ok(())
    }
}

/// Per-row mean squared error.
pub fn per_patch_l2<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<T>> {
    let (m, d) = pred.dims2()?;
    if pred.shape() != target.shape() {
        return Err(shape_err(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let inv_d = T::one() / T::of(d as f64);
    Ok((0..m)
        .map(|i| pred.row(i).iter().zip(target.row(i)).map(|(&p, &t)| (p - t) * (p - t)).sum::<T>() * inv_d)
        .collect())
}

/// `L_rrl^i = m·L_pred^i / Σ L_pred`; all ones when the sum vanishes.
pub fn attention_weights<T: Scalar>(l_pred: &[T]) -> Result<Vec<T>> {
    if l_pred.is_empty() {
        return Err(invalid("attention weights over zero patches"));
    }
    if let Some(v) = l_pred.iter().find(|&&v| v < T::zero() || !v.is_finite()) {
        return Err(invalid(format!("reconstruction loss {v} is negative or non-finite")));
    }
    let total: T = l_pred.iter().copied().sum();
    if total == T::zero() {
        return Ok(vec![T::one(); l_pred.len()]);
    }
    let m = T::of(l_pred.len() as f64);
    Ok(l_pred.iter().map(|&l| m * l / total).collect())
}

/// Which of the four label-update cases a patch falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelCase {
    /// Foreground and hard to reconstruct: stays foreground.
    ConsistentForeground,
    /// Background and easy to reconstruct: stays background.
    ConsistentBackground,
    /// Foreground but easy to reconstruct: redrawn.
    DoubtfulForeground,
    /// Background but hard to reconstruct: redrawn.
    DoubtfulBackground,
}

/// Ties at weight 1 count as consistent.
pub fn label_case<T: Scalar>(label_ori: u8, l_rrl: T) -> LabelCase {
    match (label_ori, l_rrl < T::one(), l_rrl > T::one()) {
        (1, true, _) => LabelCase::DoubtfulForeground,
        (1, _, _) => LabelCase::ConsistentForeground,
        (_, _, true) => LabelCase::DoubtfulBackground,
        _ => LabelCase::ConsistentBackground,
    }
}

pub fn update_labels<T: Scalar>(label_ori: &[u8], l_rrl: &[T], rng: &mut Rng) -> Result<Vec<u8>> {
    if label_ori.len() != l_rrl.len() {
        return Err(shape_err(format!("{} labels vs {} weights", label_ori.len(), l_rrl.len())));
    }
    label_ori
        .iter()
        .zip(l_rrl)
        .map(|(&ori, &w)| match label_case(ori, w) {
            LabelCase::ConsistentForeground => Ok(1),
            LabelCase::ConsistentBackground => Ok(0),
            LabelCase::DoubtfulForeground | LabelCase::DoubtfulBackground => rng.choice(&[0u8, 1]).copied(),
        })
        .collect()
}

fn in_scope(label_ori: &[u8], label_new: &[u8], changed_only: bool) -> Vec<usize> {
    (0..label_new.len()).filter(|&i| !changed_only || label_new[i] != label_ori[i]).collect()
}

fn check_ccl_inputs<T: Scalar>(label_ori: &[u8], soft: &[T], label_new: &[u8], xi: T) -> Result<()> {
    if label_ori.len() != soft.len() || soft.len() != label_new.len() {
        return Err(shape_err("category consistency inputs are misaligned"));
    }
    if !(xi > T::zero()) {
        return Err(invalid(format!("xi must be positive, got {xi}")));
    }
    Ok(())
}

/// Mean binary cross-entropy between refined labels and soft cluster labels
/// over the in-scope patches; zero when nothing is in scope.
pub fn category_consistency<T: Scalar>(
    label_ori: &[u8],
    label_ori_soft: &[T],
    label_new: &[u8],
    changed_only: bool,
    xi: T,
) -> Result<T> {
    check_ccl_inputs(label_ori, label_ori_soft, label_new, xi)?;
    let scope = in_scope(label_ori, label_new, changed_only);
    if scope.is_empty() {
        return Ok(T::zero());
    }
    let total: T = scope
        .iter()
        .map(|&i| {
            let p = label_ori_soft[i];
            if label_new[i] == 1 {
                -(p + xi).ln()
            } else {
                -(T::one() - p + xi).ln()
            }
        })
        .sum();
    Ok((total / T::of(scope.len() as f64)).max(T::zero()))
}

/// Gradient of [`category_consistency`] with respect to `label_ori_soft`.
pub fn category_consistency_grad<T: Scalar>(
    label_ori: &[u8],
    label_ori_soft: &[T],
    label_new: &[u8],
    changed_only: bool,
    xi: T,
) -> Result<Vec<T>> {
    check_ccl_inputs(label_ori, label_ori_soft, label_new, xi)?;
    let scope = in_scope(label_ori, label_new, changed_only);
    let mut grad = vec![T::zero(); label_new.len()];
    if scope.is_empty() {
        return Ok(grad);
    }
    let k = T::of(scope.len() as f64);
    for i in scope {
        let p = label_ori_soft[i];
        grad[i] = if label_new[i] == 1 { -T::one() / ((p + xi) * k) } else { T::one() / ((T::one() - p + xi) * k) };
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotalLoss<T: Scalar = f64> {
    /// Literal sum of the three terms, always logged.
    pub report: T,
    /// The quantity whose gradient is followed.
    pub grad: T,
}

fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        T::zero()
    } else {
        v.iter().copied().sum::<T>() / T::of(v.len() as f64)
    }
}

pub fn total_loss<T: Scalar>(l_pred: &[T], l_rrl: &[T], l_lcl: T, config: &LossConfig) -> Result<TotalLoss<T>> {
    if l_pred.len() != l_rrl.len() {
        return Err(shape_err(format!("{} reconstruction losses vs {} weights", l_pred.len(), l_rrl.len())));
    }
    let report = mean(l_pred) + mean(l_rrl) + l_lcl;
    let grad = match config.aggregation_mode {
        AggregationMode::Literal => report,
        AggregationMode::Weighted => {
            let weighted: Vec<T> = l_pred.iter().zip(l_rrl).map(|(&l, &w)| l * w).collect();
            mean(&weighted) + l_lcl
        }
    };
    Ok(TotalLoss { report, grad })
}

/// Gradient of the reconstruction part of the optimized loss with respect to
/// the predictions. Weights enter as constants; in literal mode the
/// `mean(L_rrl)` term is identically 1 and contributes nothing.
pub fn reconstruction_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    l_rrl: &[T],
    mode: AggregationMode,
) -> Result<Tensor<T>> {
    let (m, d) = pred.dims2()?;
    if pred.shape() != target.shape() || l_rrl.len() != m {
        return Err(shape_err("reconstruction gradient inputs are misaligned"));
    }
    let scale = T::of(2.0) / T::of((m * d) as f64);
    let mut g = pred.zip_map(target, |p, t| (p - t) * scale)?;
    if mode == AggregationMode::Weighted {
        for (i, &w) in l_rrl.iter().enumerate() {
            for x in g.row_mut(i) {
                *x *= w;
            }
        }
    }
    Ok(g)
}

/// Per-step loss breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLossReport {
    pub l_pred: Vec<f64>,
    pub l_rrl: Vec<f64>,
    pub l_mean: f64,
    pub label_ori: Vec<u8>,
    pub label_ori_soft: Vec<f64>,
    pub label_new: Vec<u8>,
    pub l_lcl: f64,
    pub l_all_report: f64,
    pub l_all_grad: f64,
}

impl PatchLossReport {
    pub fn labels_changed(&self) -> usize {
        self.label_ori.iter().zip(&self.label_new).filter(|(a, b)| a != b).count()
    }
}
