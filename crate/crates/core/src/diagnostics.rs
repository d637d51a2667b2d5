//! Entropy quantities over explicit finite distributions and a Monte Carlo estimator.
//!
//! `h1`, `h2` and `h3` are signed: they are expectations of `ln p`, i.e. negative entropies.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::{Rng, Tensor};

const SUM_TOLERANCE: f64 = 1e-12;

/// Probability table over a finite outcome grid, flattened in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub struct JointDist {
    table: Tensor,
}

impl JointDist {
    pub fn new(table: Tensor) -> Result<Self> {
        if let Some(v) = table.data().iter().find(|&&v| v < 0.0) {
            return Err(invalid(format!("negative probability {v}")));
        }
        let total: f64 = table.data().iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { table })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::vector(probs)?)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("empty outcome set"));
        }
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(invalid(format!("outcome {at} out of range for {n} outcomes")));
        }
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        Self::from_probs(p)
    }

    pub fn probs(&self) -> &[f64] {
        self.table.data()
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn n_outcomes(&self) -> usize {
        self.table.len()
    }

    /// Draws one outcome index by inverse CDF.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform(0.0, 1.0).expect("unit interval is valid");
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs().iter().enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}

fn flatten_json(v: &Value, depth: usize, shape: &mut Vec<usize>, out: &mut Vec<f64>) -> Result<()> {
    match v {
        Value::Number(n) => {
            if depth != shape.len() && !shape.is_empty() {
                return Err(shape_err("ragged probability table"));
            }
            out.push(n.as_f64().ok_or_else(|| invalid("non-finite probability"))?);
            Ok(())
        }
        Value::Array(items) => {
            if items.is_empty() {
                return Err(invalid("empty probability table"));
            }
            match shape.get(depth) {
                Some(&len) if len != items.len() => return Err(shape_err("ragged probability table")),
                Some(_) => {}
                None if out.is_empty() => shape.push(items.len()),
                None => return Err(shape_err("ragged probability table")),
            }
            items.iter().try_for_each(|item| flatten_json(item, depth + 1, shape, out))
        }
        other => Err(invalid(format!("expected a number or array, found {other}"))),
    }
}

impl TryFrom<Value> for JointDist {
    type Error = crate::Error;

    /// Accepts a (possibly nested) rectangular array of probabilities.
    fn try_from(v: Value) -> Result<Self> {
        let mut shape = Vec::new();
        let mut data = Vec::new();
        flatten_json(&v, 0, &mut shape, &mut data)?;
        if shape.is_empty() {
            shape.push(1);
        }
        Self::new(Tensor::new(shape, data)?)
    }
}

impl From<JointDist> for Value {
    fn from(d: JointDist) -> Value {
        fn nest(shape: &[usize], data: &[f64]) -> Value {
            match shape {
                [] | [_] => Value::from(data.to_vec()),
                [n, rest @ ..] => {
                    let step = data.len() / n;
                    Value::Array(data.chunks(step).map(|c| nest(rest, c)).collect())
                }
            }
        }
        nest(d.table.shape(), d.table.data())
    }
}

/// `Σ w·ln q` over the support of `w`; errors when `q` vanishes there.
fn expected_log(weights: &JointDist, q: &JointDist) -> Result<f64> {
    if weights.table.shape() != q.table.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", weights.table.shape(), q.table.shape())));
    }
    let mut total = 0.0;
    for (i, (&w, &qi)) in weights.probs().iter().zip(q.probs()).enumerate() {
        if w > 0.0 {
            if qi <= 0.0 {
                return Err(invalid(format!("outcome {i} has zero probability under the log distribution")));
            }
            total += w * qi.ln();
        }
    }
    Ok(total)
}

/// `Σ p ln p`.
pub fn h1(p: &JointDist) -> f64 {
    p.probs().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// `Σ p ln q`.
pub fn h2(p: &JointDist, q: &JointDist) -> Result<f64> {
    expected_log(p, q)
}

/// `Σ p̂ ln p`.
pub fn h3(p_hat: &JointDist, p: &JointDist) -> Result<f64> {
    expected_log(p_hat, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h2_le_h1: bool,
    pub h3_le_h2: bool,
}

pub fn entropy_report(p: &JointDist, q: &JointDist, p_hat: &JointDist) -> Result<EntropyReport> {
    let (a, b, c) = (h1(p), h2(p, q)?, h3(p_hat, p)?);
    Ok(EntropyReport { h1: a, h2: b, h3: c, h2_le_h1: b <= a + SUM_TOLERANCE, h3_le_h2: c <= b })
}

/// Sample mean of `f` over `n` draws from `p`, with its standard error.
pub fn monte_carlo_expectation<F: Fn(usize) -> f64>(f: F, p: &JointDist, rng: &mut Rng, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(invalid("monte carlo needs at least 2 samples"));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=n {
        let x = f(p.sample(rng));
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

pub fn exact_expectation<F: Fn(usize) -> f64>(f: F, p: &JointDist) -> f64 {
    p.probs().iter().enumerate().map(|(i, &w)| w * f(i)).sum()
}
