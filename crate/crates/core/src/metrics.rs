//! Overlap and boundary metrics on binary masks: DSC, sensitivity, boundary IoU, HD95.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{percentile, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub epsilon: f64,
    /// Thickness in pixels of the inner boundary band used by [`biou`].
    pub boundary_width: usize,
    pub hd_percentile: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, boundary_width: 2, hd_percentile: 95.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.boundary_width < 1 || !(0.0..=100.0).contains(&self.hd_percentile) {
            return Err(Error::Config(format!("invalid metric config {self:?}")));
        }
        Ok(())
    }
}

/// `H × W` mask of zeros and ones.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (height, width) = t.dims2()?;
        let bits = t
            .data()
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(invalid(format!("mask value {v} is not binary"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { height, width, bits })
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(shape_err(format!("{} bits for a {height}x{width} mask", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Mask pixels with a 4-neighbour outside the mask or on the image edge.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                if edge || !self.get(y - 1, x) || !self.get(y + 1, x) || !self.get(y, x - 1) || !self.get(y, x + 1) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    /// Mask pixels within Chebyshev distance `reach` of a boundary pixel.
    pub fn boundary_band(&self, reach: usize) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut band = vec![false; h * w];
        for (by, bx) in self.boundary() {
            for y in by.saturating_sub(reach)..=(by + reach).min(h - 1) {
                for x in bx.saturating_sub(reach)..=(bx + reach).min(w - 1) {
                    if self.get(y, x) {
                        band[y * w + x] = true;
                    }
                }
            }
        }
        band
    }
}

fn check_pair(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(shape_err(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

fn true_positives(pred: &BinaryMask, gt: &BinaryMask) -> usize {
    pred.bits.iter().zip(&gt.bits).filter(|(p, g)| **p && **g).count()
}

/// `(2·TP + ε)/(|G| + |P| + ε)`.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let tp = true_positives(pred, gt) as f64;
    Ok((2.0 * tp + cfg.epsilon) / ((gt.count() + pred.count()) as f64 + cfg.epsilon))
}

/// `(TP + ε)/(TP + FN + ε)`.
pub fn sen(pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let tp = true_positives(pred, gt) as f64;
    let fn_ = (gt.count() - true_positives(pred, gt)) as f64;
    Ok((tp + cfg.epsilon) / (tp + fn_ + cfg.epsilon))
}

/// IoU of the two masks' inner boundary bands; 1 when both are empty.
pub fn biou(pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let pb = pred.boundary_band(cfg.boundary_width);
    let gb = gt.boundary_band(cfg.boundary_width);
    let inter = pb.iter().zip(&gb).filter(|(a, b)| **a && **b).count();
    let union = pb.iter().zip(&gb).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Exact squared Euclidean distance transform to a set of seed pixels
/// (separable lower-envelope algorithm of Felzenszwalb–Huttenlocher).
fn squared_distance_transform(h: usize, w: usize, seeds: &[(usize, usize)]) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut grid = vec![inf; h * w];
    for &(y, x) in seeds {
        grid[y * w + x] = 0.0;
    }
    let mut scratch = Vec::new();
    for x in 0..w {
        scratch.clear();
        scratch.extend((0..h).map(|y| grid[y * w + x]));
        let col = envelope_1d(&scratch);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    for y in 0..h {
        let row = envelope_1d(&grid[y * w..(y + 1) * w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    grid
}

fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut v: Vec<usize> = Vec::with_capacity(finite.len());
    let mut z: Vec<f64> = Vec::with_capacity(finite.len() + 1);
    let inter = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for &q in &finite {
        while let Some(&p) = v.last() {
            let s = inter(q, p);
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.clear();
            z.push(f64::NEG_INFINITY);
        } else {
            let s = inter(q, *v.last().expect("non-empty"));
            v.push(q);
            z.push(s);
        }
    }
    z.push(f64::INFINITY);
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
    out
}

fn directed_surface_distances(from: &[(usize, usize)], to_field: &[f64], w: usize) -> Vec<f64> {
    from.iter().map(|&(y, x)| to_field[y * w + x].sqrt()).collect()
}

/// Max of the two directed percentile surface distances between mask boundaries.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::UndefinedDistance("surface distance with an empty mask".into()));
    }
    let (h, w) = (pred.height, pred.width);
    let pb = pred.boundary();
    let gb = gt.boundary();
    let to_g = squared_distance_transform(h, w, &gb);
    let to_p = squared_distance_transform(h, w, &pb);
    let a = percentile(&directed_surface_distances(&pb, &to_g, w), cfg.hd_percentile)?;
    let b = percentile(&directed_surface_distances(&gb, &to_p, w), cfg.hd_percentile)?;
    Ok(a.max(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub dsc: f64,
    pub sen: f64,
    pub biou: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
}

pub fn evaluate_pair(sample_id: usize, pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricConfig) -> Result<SampleMetrics> {
    let hd = match hd95(pred, gt, cfg) {
        Ok(v) => Some(v),
        Err(Error::UndefinedDistance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SampleMetrics { sample_id, dsc: dsc(pred, gt, cfg)?, sen: sen(pred, gt, cfg)?, biou: biou(pred, gt, cfg)?, hd95: hd })
}

pub fn metrics_csv(rows: &[SampleMetrics]) -> String {
    let mut out = String::from("sample_id,dsc,sen,biou,hd95\n");
    for r in rows {
        let hd = r.hd95.map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(out, "{},{},{},{},{}", r.sample_id, r.dsc, r.sen, r.biou, hd).expect("writing to a String");
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[SampleMetrics]) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}
