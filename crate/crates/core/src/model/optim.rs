use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Moment estimates for AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T: Scalar = f64> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(config: AdamWConfig, params: &[&Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| p.zeros_like()).collect(),
            v: params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    /// One update at learning rate `lr` (the configured rate is the schedule's base).
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(shape_err(format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), self.m.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        if !(lr >= 0.0) {
            return Err(invalid(format!("learning rate {lr} is negative")));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(lr), T::of(c.eps));
        let decay = T::one() - lr * T::of(c.weight_decay);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base·½(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if step > total_steps || total_steps == 0 {
        return Err(invalid(format!("step {step} outside 0..={total_steps}")));
    }
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Tensor {
        Tensor::vector(vec![x]).unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut p = scalar(0.7);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut s = AdamWState::new(cfg, &[&p]);
        for _ in 0..5 {
            s.step(vec![&mut p], &[scalar(0.0)], cfg.lr).unwrap();
        }
        assert_eq!(p.data()[0], 0.7);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = scalar(1.0);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut s = AdamWState::new(cfg, &[&p]);
        s.step(vec![&mut p], &[scalar(1.0)], 1e-4).unwrap();
        // m̂ = 1, v̂ = 1 → step of lr/(1 + eps)
        assert!((p.data()[0] - (1.0 - 1e-4 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p.data()[0] - 0.9999).abs() < 1e-11);
    }

    #[test]
    fn decoupled_decay_alone() {
        let mut p = scalar(2.0);
        let cfg = AdamWConfig { weight_decay: 1e-4, ..Default::default() };
        let mut s = AdamWState::new(cfg, &[&p]);
        s.step(vec![&mut p], &[scalar(0.0)], 1e-4).unwrap();
        assert_eq!(p.data()[0], 2.0 * (1.0 - 1e-4 * 1e-4));
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(p) = ½ Σ a_i p_i²
        let a = [1.0, 4.0, 0.5];
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let f = |p: &Tensor| p.data().iter().zip(a).map(|(x, a)| 0.5 * a * x * x).sum::<f64>();
        let mut s = AdamWState::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &[&p]);
        let before = f(&p);
        let g = Tensor::vector(p.data().iter().zip(a).map(|(x, a)| a * x).collect()).unwrap();
        s.step(vec![&mut p], &[g], 1e-3).unwrap();
        assert!(f(&p) < before);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar(1.0);
        let mut s = AdamWState::new(AdamWConfig::default(), &[&p]);
        assert!(s.step(vec![&mut p], &[Tensor::zeros(&[2])], 1e-4).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 1e-4).unwrap(), 1e-4);
        assert!(cosine_lr(100, 100, 1e-4).unwrap().abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-4).unwrap() - 5e-5).abs() < 1e-18);
        assert!(cosine_lr(101, 100, 1e-4).is_err());
    }
}
