use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation.
    Gelu,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Gelu => {
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let a = T::of(GELU_A);
                let th = (c * (x + a * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
            }
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

/// Gradients of one layer plus the gradient flowing to its input.
pub struct LinearGrads<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit).map(T::of)).collect::<Result<_>>()?;
        Ok(Self { weight: Tensor::matrix(fan_in, fan_out, data)?, bias: Tensor::zeros(&[fan_out]), activation })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut pre = x.matmul(&self.weight)?;
        pre.add_row_vector(&self.bias)?;
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            act => pre.map(|v| act.apply(v)),
        };
        Ok((pre, out))
    }

    pub fn backward(&self, x: &Tensor<T>, pre: &Tensor<T>, d_out: &Tensor<T>) -> Result<LinearGrads<T>> {
        if d_out.shape() != pre.shape() {
            return Err(shape_err(format!("upstream gradient {:?} vs output {:?}", d_out.shape(), pre.shape())));
        }
        let d_pre = match self.activation {
            Activation::Identity => d_out.clone(),
            act => d_out.zip_map(pre, |g, p| g * act.derivative(p))?,
        };
        Ok(LinearGrads {
            weight: x.t_matmul(&d_pre)?,
            bias: d_pre.sum_rows()?,
            input: d_pre.matmul_t(&self.weight)?,
        })
    }
}
