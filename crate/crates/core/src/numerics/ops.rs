use crate::error::{invalid, Result};

use super::{Scalar, Tensor};

/// Temperature softmax with max subtraction.
pub fn softmax<T: Scalar>(v: &Tensor<T>, temperature: T) -> Result<Tensor<T>> {
    if !(temperature > T::zero()) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    Tensor::vector(softmax_slice(v.data(), temperature))
}

pub(crate) fn softmax_slice<T: Scalar>(v: &[T], temperature: T) -> Vec<T> {
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = v.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Linear-interpolation percentile (`q` in percent) over the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(invalid(format!("percentile q={q} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
