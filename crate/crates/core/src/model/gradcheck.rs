//! Analytic-vs-finite-difference gradient check on randomized tiny models.

use serde::Serialize;

use crate::error::Result;
use crate::numerics::{Rng, Tensor};

use super::autoencoder::{MlpAutoencoder, ModelConfig};

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub models: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Parameter tensor with the largest error, e.g. `decoder.1.weight`.
    pub worst_parameter: String,
}

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that entries with (near-)zero gradient are judged absolutely.
const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn probe_loss(model: &MlpAutoencoder, raw: &Tensor, flags: &[bool], up_recon: &Tensor, up_emb: &Tensor) -> Result<f64> {
    let mut input = raw.clone();
    for (i, &m) in flags.iter().enumerate() {
        if m {
            input.row_mut(i).copy_from_slice(model.mask_token.data());
        }
    }
    let (emb, recon, _) = model.forward(&input, flags)?;
    let a: f64 = recon.data().iter().zip(up_recon.data()).map(|(r, u)| r * u).sum();
    let b: f64 = emb.data().iter().zip(up_emb.data()).map(|(e, u)| e * u).sum();
    Ok(a + b)
}

fn check_one(rng: &mut Rng, context: bool) -> Result<(usize, f64, String)> {
    let (rows, cols) = (2, 2);
    let cfg = ModelConfig { patch_dim: 6, hidden_dim: 5, embed_dim: 3, neighbor_context: context, grid_rows: rows, grid_cols: cols };
    let n = rows * cols;
    let mut model = MlpAutoencoder::new(cfg, rng)?;
    let draw = |rng: &mut Rng, k: usize, s: f64| -> Result<Vec<f64>> { (0..k).map(|_| rng.normal(0.0, s)).collect() };
    model.mask_token = Tensor::vector(draw(rng, 6, 0.5)?)?;
    for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
        layer.bias = Tensor::vector(draw(rng, layer.fan_out(), 0.2)?)?;
    }
    let raw = Tensor::matrix(n, 6, (0..n * 6).map(|_| rng.uniform(0.0, 1.0)).collect::<Result<_>>()?)?;
    let mut flags: Vec<bool> = (0..n).map(|_| rng.below(2).map(|b| b == 1)).collect::<Result<_>>()?;
    flags[rng.below(n)?] = true;
    let up_recon = Tensor::matrix(n, 6, draw(rng, n * 6, 1.0)?)?;
    let up_emb = Tensor::matrix(n, 3, draw(rng, n * 3, 1.0)?)?;

    let mut input = raw.clone();
    for (i, &m) in flags.iter().enumerate() {
        if m {
            input.row_mut(i).copy_from_slice(model.mask_token.data());
        }
    }
    let (_, _, cache) = model.forward(&input, &flags)?;
    let grads = model.backward(&cache, &up_recon, Some(&up_emb))?;

    let names = model.parameter_names();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for p in 0..names.len() {
        for k in 0..grads.tensors[p].len() {
            let original = model.parameters()[p].data()[k];
            model.parameters_mut()[p].data_mut()[k] = original + FD_STEP;
            let up = probe_loss(&model, &raw, &flags, &up_recon, &up_emb)?;
            model.parameters_mut()[p].data_mut()[k] = original - FD_STEP;
            let down = probe_loss(&model, &raw, &flags, &up_recon, &up_emb)?;
            model.parameters_mut()[p].data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(grads.tensors[p].data()[k], numeric);
            if err > worst.0 {
                worst = (err, names[p].clone());
            }
            checked += 1;
        }
    }
    Ok((checked, worst.0, worst.1))
}

/// Checks `models` random tiny networks (d=6, e=3), alternating the neighbour
/// context on and off, every parameter entry including the mask token.
pub fn grad_check(seed: u64, models: usize) -> Result<GradCheckReport> {
    let root = Rng::new(seed);
    let mut report = GradCheckReport { models, entries_checked: 0, max_rel_error: 0.0, worst_parameter: String::new() };
    for i in 0..models {
        let mut rng = root.split_with("grad-check", &[i as u64]);
        let (checked, err, name) = check_one(&mut rng, i % 2 == 0)?;
        report.entries_checked += checked;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_parameter = name;
        }
    }
    Ok(report)
}
