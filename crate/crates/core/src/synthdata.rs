//! Synthetic lesion images with pixel and patch ground truth.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{load_tensor, save_tensor, Rng, Tensor};
use crate::patches::{write_pgm, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub lesion_count_min: usize,
    pub lesion_count_max: usize,
    pub lesion_radius_min: usize,
    pub lesion_radius_max: usize,
    pub lesion_intensity_min: f64,
    pub lesion_intensity_max: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Gaussian smoothing radius (pixels) of the background texture; 0 gives white noise.
    pub texture_scale: f64,
    /// Minimum lesion pixels for a patch to count as foreground.
    pub patch_label_threshold: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            patch_side: 8,
            lesion_count_min: 1,
            lesion_count_max: 3,
            lesion_radius_min: 2,
            lesion_radius_max: 5,
            lesion_intensity_min: 0.7,
            lesion_intensity_max: 1.0,
            noise_mean: 0.3,
            noise_std: 0.1,
            texture_scale: 2.0,
            patch_label_threshold: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_side == 0 || self.image_side == 0 || self.image_side % self.patch_side != 0 {
            return fail(format!("image_side {} is not divisible by patch_side {}", self.image_side, self.patch_side));
        }
        if self.lesion_count_min > self.lesion_count_max {
            return fail("lesion_count_min exceeds lesion_count_max".into());
        }
        if self.lesion_radius_min > self.lesion_radius_max {
            return fail("lesion_radius_min exceeds lesion_radius_max".into());
        }
        if 4 * self.lesion_radius_max >= self.image_side {
            return fail(format!("lesion radius {} must stay below image_side/4", self.lesion_radius_max));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.lesion_intensity_min)
            || !unit.contains(&self.lesion_intensity_max)
            || self.lesion_intensity_min > self.lesion_intensity_max
        {
            return fail("lesion intensities must be an ordered range inside [0, 1]".into());
        }
        if !(self.noise_std >= 0.0) || !unit.contains(&self.noise_mean) {
            return fail("noise_mean must lie in [0, 1] and noise_std be non-negative".into());
        }
        if !(self.texture_scale >= 0.0) || self.texture_scale > self.image_side as f64 {
            return fail(format!("texture_scale must lie in [0, image_side], got {}", self.texture_scale));
        }
        if self.patch_label_threshold == 0 {
            return fail("patch_label_threshold must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_side
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub pixel_mask: Tensor,
    pub patch_labels: Vec<u8>,
}

/// Patch is foreground when it holds at least `threshold` mask pixels.
pub fn patch_labels_from_mask(mask: &Tensor, patch_side: usize, threshold: usize) -> Result<Vec<u8>> {
    let (h, w) = mask.dims2()?;
    let (rows, cols) = (h / patch_side, w / patch_side);
    let mut counts = vec![0usize; rows * cols];
    for y in 0..h {
        for x in 0..w {
            if mask.at(y, x) > 0.5 {
                counts[(y / patch_side) * cols + x / patch_side] += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|c| u8::from(c >= threshold)).collect())
}

fn noisy(rng: &mut Rng, mean: f64, std: f64) -> Result<f64> {
    if std == 0.0 {
        return Ok(mean);
    }
    rng.normal(mean, std)
}

/// Unit-variance white noise smoothed by a periodic Gaussian kernel and
/// rescaled to unit variance again.
fn texture(rng: &mut Rng, side: usize, scale: f64) -> Result<Vec<f64>> {
    let white = (0..side * side).map(|_| rng.normal(0.0, 1.0)).collect::<Result<Vec<f64>>>()?;
    if scale == 0.0 {
        return Ok(white);
    }
    let reach = ((3.0 * scale).ceil() as usize).min(side / 2);
    let kernel: Vec<f64> = (0..=2 * reach)
        .map(|i| {
            let d = i as f64 - reach as f64;
            (-0.5 * d * d / (scale * scale)).exp()
        })
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>();
    let blur = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    let off = (i + side - reach % side) % side;
                    let (sy, sx) = if along_rows { (y, (x + off) % side) } else { ((y + off) % side, x) };
                    acc += k * src[sy * side + sx];
                }
                out[y * side + x] = acc;
            }
        }
        out
    };
    let smooth = blur(&blur(&white, true), false);
    Ok(smooth.into_iter().map(|v| v / norm).collect())
}

pub fn generate(rng: &mut Rng, config: &SynthConfig) -> Result<SynthSample> {
    config.validate()?;
    let side = config.image_side;
    let pixels: Vec<f64> = texture(rng, side, config.texture_scale)?
        .into_iter()
        .map(|t| (config.noise_mean + config.noise_std * t).clamp(0.0, 1.0))
        .collect();
    let mut pixels = pixels;
    let mut mask = vec![0.0; side * side];
    let count = rng.int_inclusive(config.lesion_count_min as i64, config.lesion_count_max as i64)?;
    for _ in 0..count {
        let r = rng.int_inclusive(config.lesion_radius_min as i64, config.lesion_radius_max as i64)?;
        let cy = rng.int_inclusive(r, side as i64 - 1 - r)?;
        let cx = rng.int_inclusive(r, side as i64 - 1 - r)?;
        let intensity = if config.lesion_intensity_min < config.lesion_intensity_max {
            rng.uniform(config.lesion_intensity_min, config.lesion_intensity_max)?
        } else {
            config.lesion_intensity_min
        };
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r {
                    let k = y as usize * side + x as usize;
                    pixels[k] = noisy(rng, intensity, config.noise_std * 0.5)?.clamp(0.0, 1.0);
                    mask[k] = 1.0;
                }
            }
        }
    }
    let pixel_mask = Tensor::matrix(side, side, mask)?;
    let patch_labels = patch_labels_from_mask(&pixel_mask, config.patch_side, config.patch_label_threshold)?;
    Ok(SynthSample { image: Image::from_vec(side, side, pixels)?, pixel_mask, patch_labels })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub config: SynthConfig,
    pub label_fraction: f64,
    pub samples: Vec<SynthSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Subset of `train` with labels available for fine-tuning.
    pub labeled: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    n_samples: usize,
    label_fraction: f64,
    config: SynthConfig,
    train: Vec<usize>,
    test: Vec<usize>,
    labeled: Vec<usize>,
}

/// Generates `n_samples` images; every fifth position of a seeded shuffle is
/// held out for testing and `⌈n·label_fraction⌉` training samples (capped at
/// the training split size) are flagged as labeled.
pub fn make_dataset(rng: &Rng, n_samples: usize, label_fraction: f64, config: &SynthConfig) -> Result<Dataset> {
    if n_samples < 5 {
        return Err(Error::Config(format!("need at least 5 samples, got {n_samples}")));
    }
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::Config(format!("label_fraction must lie in (0, 1], got {label_fraction}")));
    }
    config.validate()?;
    let samples = (0..n_samples)
        .map(|k| generate(&mut rng.split_with("sample", &[k as u64]), config))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..n_samples).collect();
    rng.split("split").shuffle(&mut order);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pos, &k) in order.iter().enumerate() {
        if pos % 5 == 4 {
            test.push(k);
        } else {
            train.push(k);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    let wanted = ((n_samples as f64 * label_fraction) - 1e-9).ceil().max(1.0) as usize;
    let n_labeled = wanted.min(train.len());
    let picks = rng.split("labeled").sample_indices(train.len(), n_labeled)?;
    let mut labeled: Vec<usize> = picks.into_iter().map(|i| train[i]).collect();
    labeled.sort_unstable();
    Ok(Dataset { seed: rng.seed(), config: *config, label_fraction, samples, train, test, labeled })
}

fn stem(k: usize) -> String {
    format!("sample_{k:04}")
}

impl Dataset {
    pub fn images(&self, idx: &[usize]) -> Vec<&Image> {
        idx.iter().map(|&k| &self.samples[k].image).collect()
    }

    /// One directory per split with AMLT tensors and PGM previews, plus `manifest.json`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (split, members) in [("train", &self.train), ("test", &self.test)] {
            let sub = dir.join(split);
            fs::create_dir_all(&sub)?;
            for &k in members.iter() {
                let s = &self.samples[k];
                save_tensor(sub.join(format!("{}_image.amlt", stem(k))), s.image.pixels())?;
                save_tensor(sub.join(format!("{}_mask.amlt", stem(k))), &s.pixel_mask)?;
                write_pgm(sub.join(format!("{}_image.pgm", stem(k))), s.image.pixels())?;
                write_pgm(sub.join(format!("{}_mask.pgm", stem(k))), &s.pixel_mask)?;
            }
        }
        let manifest = Manifest {
            seed: self.seed,
            n_samples: self.samples.len(),
            label_fraction: self.label_fraction,
            config: self.config,
            train: self.train.clone(),
            test: self.test.clone(),
            labeled: self.labeled.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        manifest.config.validate()?;
        let mut samples: Vec<Option<SynthSample>> = vec![None; manifest.n_samples];
        for (split, members) in [("train", &manifest.train), ("test", &manifest.test)] {
            for &k in members {
                let slot = samples.get_mut(k).ok_or_else(|| Error::Corrupt(format!("sample index {k} out of range")))?;
                let sub = dir.join(split);
                let image = Image::new(load_tensor(sub.join(format!("{}_image.amlt", stem(k))))?)?;
                let pixel_mask: Tensor = load_tensor(sub.join(format!("{}_mask.amlt", stem(k))))?;
                let patch_labels = patch_labels_from_mask(
                    &pixel_mask,
                    manifest.config.patch_side,
                    manifest.config.patch_label_threshold,
                )?;
                *slot = Some(SynthSample { image, pixel_mask, patch_labels });
            }
        }
        let samples = samples
            .into_iter()
            .enumerate()
            .map(|(k, s)| s.ok_or_else(|| Error::Corrupt(format!("sample {k} is in neither split"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            seed: manifest.seed,
            config: manifest.config,
            label_fraction: manifest.label_fraction,
            samples,
            train: manifest.train,
            test: manifest.test,
            labeled: manifest.labeled,
        })
    }
}
