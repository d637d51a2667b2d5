use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Scalar, Tensor};

use super::layers::{Activation, Linear};

/// Per-patch foreground classifier on top of encoder embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SegHead<T: Scalar = f64> {
    pub linear: Linear<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> SegHead<T> {
    pub fn new(embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self { linear: Linear::glorot(embed_dim, 1, Activation::Identity, rng)? })
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        vec![&self.linear.weight, &self.linear.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.linear.weight, &mut self.linear.bias]
    }

    pub fn logits(&self, emb: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.linear.forward(emb)?.1.into_data())
    }

    pub fn probabilities(&self, emb: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.logits(emb)?.into_iter().map(sigmoid).collect())
    }

    /// Mean binary cross-entropy over patches, from logits.
    pub fn bce(logits: &[T], labels: &[u8]) -> Result<T> {
        if logits.len() != labels.len() || logits.is_empty() {
            return Err(shape_err(format!("{} logits vs {} labels", logits.len(), labels.len())));
        }
        let total: T = logits
            .iter()
            .zip(labels)
            .map(|(&l, &y)| {
                let y = T::of(y as f64);
                l.max(T::zero()) - l * y + (T::one() + (-l.abs()).exp()).ln()
            })
            .sum();
        Ok(total / T::of(logits.len() as f64))
    }

    /// Gradients of [`Self::bce`] for `(weight, bias)` and for the embeddings.
    pub fn bce_backward(&self, emb: &Tensor<T>, logits: &[T], labels: &[u8]) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let n = logits.len();
        if labels.len() != n || emb.rows() != n {
            return Err(shape_err("head backward inputs are misaligned"));
        }
        let inv = T::one() / T::of(n as f64);
        let d_logit: Vec<T> = logits.iter().zip(labels).map(|(&l, &y)| (sigmoid(l) - T::of(y as f64)) * inv).collect();
        let d_out = Tensor::matrix(n, 1, d_logit)?;
        let (pre, _) = self.linear.forward(emb)?;
        let g = self.linear.backward(emb, &pre, &d_out)?;
        Ok((vec![g.weight, g.bias], g.input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_are_open_unit_interval() {
        let head: SegHead = SegHead::new(3, &mut Rng::new(0)).unwrap();
        let emb = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0], vec![10.0, 10.0, -10.0]]).unwrap();
        for p in head.probabilities(&emb).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut head: SegHead = SegHead::new(3, &mut Rng::new(2)).unwrap();
        let emb = Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![-1.0, 0.4, 0.1]]).unwrap();
        let labels = [1u8, 0];
        let logits = head.logits(&emb).unwrap();
        let (grads, d_emb) = head.bce_backward(&emb, &logits, &labels).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let orig = head.linear.weight.data()[k];
            head.linear.weight.data_mut()[k] = orig + h;
            let up = SegHead::bce(&head.logits(&emb).unwrap(), &labels).unwrap();
            head.linear.weight.data_mut()[k] = orig - h;
            let down = SegHead::bce(&head.logits(&emb).unwrap(), &labels).unwrap();
            head.linear.weight.data_mut()[k] = orig;
            assert!(((up - down) / (2.0 * h) - grads[0].data()[k]).abs() < 1e-8);
        }
        for k in 0..6 {
            let mut e = emb.clone();
            e.data_mut()[k] += h;
            let up = SegHead::bce(&head.logits(&e).unwrap(), &labels).unwrap();
            e.data_mut()[k] -= 2.0 * h;
            let down = SegHead::bce(&head.logits(&e).unwrap(), &labels).unwrap();
            assert!(((up - down) / (2.0 * h) - d_emb.data()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let l = SegHead::<f64>::bce(&[800.0, -800.0], &[1, 0]).unwrap();
        assert!(l.is_finite() && l < 1e-12);
    }
}
