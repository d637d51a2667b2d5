//! Image partitioning into equal square patches.

use std::fs;
use std::path::Path;

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Single-channel image with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Scalar = f64> {
    pixels: Tensor<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(pixels: Tensor<T>) -> Result<Self> {
        pixels.dims2()?;
        if let Some(v) = pixels.data().iter().find(|&&v| v < T::zero() || v > T::one()) {
            return Err(invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor::matrix(height, width, data)?)
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn pixels(&self) -> &Tensor<T> {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels.at(y, x)
    }
}

/// An image cut into `rows × cols` patches, flattened row-major into an `n × side²` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T: Scalar = f64> {
    pub patch_side: usize,
    pub rows: usize,
    pub cols: usize,
    pub matrix: Tensor<T>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn patch(&self, k: usize) -> &[T] {
        self.matrix.row(k)
    }
}

pub fn partition<T: Scalar>(image: &Image<T>, patch_side: usize) -> Result<PatchGrid<T>> {
    let (h, w) = (image.height(), image.width());
    if patch_side == 0 || h % patch_side != 0 || w % patch_side != 0 {
        return Err(shape_err(format!("{h}x{w} image is not divisible into {patch_side}x{patch_side} patches")));
    }
    let (rows, cols) = (h / patch_side, w / patch_side);
    let d = patch_side * patch_side;
    let src = image.pixels.data();
    let mut data = Vec::with_capacity(rows * cols * d);
    for gr in 0..rows {
        for gc in 0..cols {
            for py in 0..patch_side {
                let start = (gr * patch_side + py) * w + gc * patch_side;
                data.extend_from_slice(&src[start..start + patch_side]);
            }
        }
    }
    Ok(PatchGrid { patch_side, rows, cols, matrix: Tensor::matrix(rows * cols, d, data)? })
}

pub fn reassemble<T: Scalar>(grid: &PatchGrid<T>) -> Result<Image<T>> {
    let s = grid.patch_side;
    let (n, d) = grid.matrix.dims2()?;
    if n != grid.n() || d != s * s {
        return Err(shape_err(format!("patch matrix {n}x{d} does not match a {}x{} grid of side {s}", grid.rows, grid.cols)));
    }
    let (h, w) = (grid.rows * s, grid.cols * s);
    let mut out = vec![T::zero(); h * w];
    for k in 0..n {
        let (gr, gc) = (k / grid.cols, k % grid.cols);
        let patch = grid.matrix.row(k);
        for py in 0..s {
            let start = (gr * s + py) * w + gc * s;
            out[start..start + s].copy_from_slice(&patch[py * s..(py + 1) * s]);
        }
    }
    Image::from_vec(h, w, out)
}

/// Expands one value per patch into a full-resolution map (nearest/block upsampling).
pub fn block_expand<T: Scalar>(per_patch: &[T], rows: usize, cols: usize, patch_side: usize) -> Result<Tensor<T>> {
    if per_patch.len() != rows * cols {
        return Err(shape_err(format!("{} patch values for a {rows}x{cols} grid", per_patch.len())));
    }
    let (h, w) = (rows * patch_side, cols * patch_side);
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = per_patch[(y / patch_side) * cols + x / patch_side];
        }
    }
    Tensor::matrix(h, w, out)
}

/// Binary P5 PGM, maxval 255, `[0, 1]` mapped linearly onto `0..=255`.
pub fn write_pgm<T: Scalar>(path: impl AsRef<Path>, pixels: &Tensor<T>) -> Result<()> {
    let (h, w) = pixels.dims2()?;
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(pixels.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image<f64>> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Corrupt("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Corrupt(format!("unsupported PGM header {fields:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Corrupt(format!("bad PGM dimension {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Corrupt("truncated PGM body".into()))?;
    Image::from_vec(h, w, body.iter().map(|&b| b as f64 / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn ramp(h: usize, w: usize) -> Image {
        let n = (h * w) as f64;
        Image::from_vec(h, w, (0..h * w).map(|i| i as f64 / n).collect()).unwrap()
    }

    #[test]
    fn desk_geometry_gives_256_patches() {
        let grid = partition(&ramp(160, 160), 10).unwrap();
        assert_eq!(grid.n(), 256);
        assert_eq!(grid.matrix.shape(), &[256, 100]);
    }

    #[test]
    fn whole_image_patch() {
        let img = ramp(2, 2);
        let grid = partition(&img, 2).unwrap();
        assert_eq!(grid.n(), 1);
        assert_eq!(grid.patch(0), img.pixels().data());
    }

    #[test]
    fn bottom_right_block_is_patch_three() {
        let img = ramp(4, 4);
        let grid = partition(&img, 2).unwrap();
        let px = |i: usize| i as f64 / 16.0;
        assert_eq!(grid.patch(3), &[px(10), px(11), px(14), px(15)]);
        assert_eq!(grid.patch(1), &[px(2), px(3), px(6), px(7)]);
    }

    #[test]
    fn indivisible_is_rejected() {
        assert!(partition(&ramp(6, 6), 4).is_err());
        assert!(partition(&ramp(4, 4), 0).is_err());
    }

    #[test]
    fn zero_and_checkerboard_round_trip() {
        let zero = Image::from_vec(8, 8, vec![0.0; 64]).unwrap();
        assert_eq!(reassemble(&partition(&zero, 4).unwrap()).unwrap(), zero);
        let checker = Image::from_vec(8, 8, (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64).collect()).unwrap();
        assert_eq!(reassemble(&partition(&checker, 4).unwrap()).unwrap(), checker);
    }

    #[test]
    fn pixel_values_are_range_checked() {
        assert!(Image::from_vec(1, 2, vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn block_expand_repeats_values() {
        let m = block_expand(&[1.0, 0.0], 1, 2, 2).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let img = ramp(4, 6);
        write_pgm(&p, img.pixels()).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!((back.height(), back.width()), (4, 6));
        for (a, b) in img.pixels().data().iter().zip(back.pixels().data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn reassemble_inverts_partition(seed in any::<u64>(), side in 1usize..5, rows in 1usize..5, cols in 1usize..5) {
            let mut rng = Rng::new(seed);
            let (h, w) = (rows * side, cols * side);
            let img = Image::from_vec(h, w, (0..h * w).map(|_| rng.uniform(0.0, 1.0).unwrap()).collect()).unwrap();
            let grid = partition(&img, side).unwrap();
            prop_assert_eq!(reassemble(&grid).unwrap(), img);
        }

        #[test]
        fn one_pixel_touches_one_patch_entry(seed in any::<u64>(), y in 0usize..16, x in 0usize..16) {
            let mut rng = Rng::new(seed);
            let data: Vec<f64> = (0..256).map(|_| rng.uniform(0.0, 0.5).unwrap()).collect();
            let base = partition(&Image::from_vec(16, 16, data.clone()).unwrap(), 4).unwrap();
            let mut changed = data;
            changed[y * 16 + x] = 0.9;
            let moved = partition(&Image::from_vec(16, 16, changed).unwrap(), 4).unwrap();
            let diffs = base.matrix.data().iter().zip(moved.matrix.data()).filter(|(a, b)| a != b).count();
            prop_assert_eq!(diffs, 1);
        }
    }
}
