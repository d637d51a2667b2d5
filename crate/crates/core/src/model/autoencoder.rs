use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{Rng, Scalar, Tensor};

use super::layers::{Activation, Linear};

/// Patch-level encoder/decoder geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Feed each patch's decoder the mean embedding of its 4-neighbours.
    pub neighbor_context: bool,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl ModelConfig {
    pub fn new(patch_dim: usize, grid_rows: usize, grid_cols: usize) -> Self {
        Self { patch_dim, hidden_dim: 64, embed_dim: 32, neighbor_context: true, grid_rows, grid_cols }
    }

    pub fn n_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.n_patches() == 0 {
            return Err(invalid(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Encoder `d → hidden → embed` and decoder `embed (+ context) → hidden → d`,
/// applied patch by patch, with a learned token that replaces masked inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpAutoencoder<T: Scalar = f64> {
    pub config: ModelConfig,
    pub encoder: Vec<Linear<T>>,
    pub decoder: Vec<Linear<T>>,
    pub mask_token: Tensor<T>,
    revision: u64,
}

/// Gradients aligned with [`MlpAutoencoder::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar = f64> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Self { tensors: params.iter().map(|p| p.zeros_like()).collect() }
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(shape_err("gradient sets of different length"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            *t = t.scale(s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors.iter().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }
}

struct LayerTrace<T: Scalar> {
    input: Tensor<T>,
    pre: Tensor<T>,
}

/// Intermediates of an encoder pass.
pub struct EncoderCache<T: Scalar> {
    revision: u64,
    masked_rows: Vec<bool>,
    layers: Vec<LayerTrace<T>>,
}

/// Intermediates of a full forward pass.
pub struct ForwardCache<T: Scalar> {
    encoder: EncoderCache<T>,
    decoded_rows: Vec<usize>,
    decoder: Vec<LayerTrace<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn decoded_rows(&self) -> &[usize] {
        &self.decoded_rows
    }
}

fn neighbors(k: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (k / cols, k % cols);
    let up = (r > 0).then(|| k - cols);
    let down = (r + 1 < rows).then(|| k + cols);
    let left = (c > 0).then(|| k - 1);
    let right = (c + 1 < cols).then(|| k + 1);
    [up, down, left, right].into_iter().flatten()
}

impl<T: Scalar> MlpAutoencoder<T> {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, e) = (config.patch_dim, config.hidden_dim, config.embed_dim);
        let dec_in = if config.neighbor_context { 2 * e } else { e };
        let encoder = vec![Linear::glorot(d, h, Activation::Gelu, rng)?, Linear::glorot(h, e, Activation::Gelu, rng)?];
        let decoder =
            vec![Linear::glorot(dec_in, h, Activation::Gelu, rng)?, Linear::glorot(h, d, Activation::Identity, rng)?];
        Ok(Self { config, encoder, decoder, mask_token: Tensor::zeros(&[d]), revision: 0 })
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for i in 0..layers.len() {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names.push("mask_token".into());
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.mask_token);
        out
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.revision += 1;
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.mask_token);
        out
    }

    /// Number of encoder parameter tensors at the front of [`Self::parameters`].
    pub fn encoder_parameter_count(&self) -> usize {
        2 * self.encoder.len()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients::zeros_like(&self.parameters())
    }

    fn check_input(&self, input: &Tensor<T>, masked_rows: &[bool]) -> Result<usize> {
        let (n, d) = input.dims2()?;
        if d != self.config.patch_dim {
            return Err(shape_err(format!("input width {d}, model expects {}", self.config.patch_dim)));
        }
        if masked_rows.len() != n {
            return Err(shape_err(format!("{} mask flags for {n} rows", masked_rows.len())));
        }
        if self.config.neighbor_context && n != self.config.n_patches() {
            return Err(shape_err(format!("context decoding needs all {} patches, got {n}", self.config.n_patches())));
        }
        Ok(n)
    }

    /// Encodes every row; rows flagged in `masked_rows` must already hold the mask token.
    pub fn encode(&self, input: &Tensor<T>, masked_rows: &[bool]) -> Result<(Tensor<T>, EncoderCache<T>)> {
        let (_, d) = input.dims2()?;
        if d != self.config.patch_dim {
            return Err(shape_err(format!("input width {d}, model expects {}", self.config.patch_dim)));
        }
        if masked_rows.len() != input.rows() {
            return Err(shape_err(format!("{} mask flags for {} rows", masked_rows.len(), input.rows())));
        }
        let mut x = input.clone();
        let mut layers = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (pre, out) = layer.forward(&x)?;
            layers.push(LayerTrace { input: x, pre });
            x = out;
        }
        Ok((x, EncoderCache { revision: self.revision, masked_rows: masked_rows.to_vec(), layers }))
    }

    fn decoder_input(&self, emb: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
        let e = self.config.embed_dim;
        if !self.config.neighbor_context {
            return emb.select_rows(rows);
        }
        let (gr, gc) = (self.config.grid_rows, self.config.grid_cols);
        let mut data = Vec::with_capacity(rows.len() * 2 * e);
        for &k in rows {
            data.extend_from_slice(emb.row(k));
            let nb: Vec<usize> = neighbors(k, gr, gc).collect();
            let mut ctx = vec![T::zero(); e];
            if !nb.is_empty() {
                for &j in &nb {
                    for (c, &z) in ctx.iter_mut().zip(emb.row(j)) {
                        *c += z;
                    }
                }
                let inv = T::one() / T::of(nb.len() as f64);
                ctx.iter_mut().for_each(|c| *c *= inv);
            }
            data.extend_from_slice(&ctx);
        }
        Tensor::matrix(rows.len(), 2 * e, data)
    }

    /// Full pass over all rows.
    pub fn forward(&self, input: &Tensor<T>, masked_rows: &[bool]) -> Result<(Tensor<T>, Tensor<T>, ForwardCache<T>)> {
        let all: Vec<usize> = (0..input.rows()).collect();
        self.forward_rows(input, masked_rows, &all)
    }

    /// Encodes all rows but decodes only `decode_rows` (in that order).
    pub fn forward_rows(
        &self,
        input: &Tensor<T>,
        masked_rows: &[bool],
        decode_rows: &[usize],
    ) -> Result<(Tensor<T>, Tensor<T>, ForwardCache<T>)> {
        let n = self.check_input(input, masked_rows)?;
        if let Some(&bad) = decode_rows.iter().find(|&&r| r >= n) {
            return Err(invalid(format!("decode row {bad} out of range for {n} rows")));
        }
        let (emb, enc_cache) = self.encode(input, masked_rows)?;
        let mut x = self.decoder_input(&emb, decode_rows)?;
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (pre, out) = layer.forward(&x)?;
            decoder.push(LayerTrace { input: x, pre });
            x = out;
        }
        let cache = ForwardCache { encoder: enc_cache, decoded_rows: decode_rows.to_vec(), decoder };
        Ok((emb, x, cache))
    }

    /// Backpropagates through the encoder alone.
    pub fn encode_backward(&self, cache: &EncoderCache<T>, d_emb: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = self.zero_grads();
        self.encoder_backward_into(cache, d_emb.clone(), &mut grads)?;
        Ok(grads)
    }

    fn encoder_backward_into(&self, cache: &EncoderCache<T>, mut d: Tensor<T>, grads: &mut Gradients<T>) -> Result<()> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache("parameters changed since the forward pass".into()));
        }
        for (i, (layer, trace)) in self.encoder.iter().zip(&cache.layers).enumerate().rev() {
            let g = layer.backward(&trace.input, &trace.pre, &d)?;
            grads.tensors[2 * i].add_assign(&g.weight)?;
            grads.tensors[2 * i + 1].add_assign(&g.bias)?;
            d = g.input;
        }
        let token = grads.tensors.last_mut().expect("mask token gradient slot");
        for (i, &masked) in cache.masked_rows.iter().enumerate() {
            if masked {
                for (t, &g) in token.data_mut().iter_mut().zip(d.row(i)) {
                    *t += g;
                }
            }
        }
        Ok(())
    }

    /// Exact reverse-mode gradients for upstream gradients on the decoded
    /// rows and (optionally) on the embeddings of all rows.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_recon: &Tensor<T>,
        d_emb: Option<&Tensor<T>>,
    ) -> Result<Gradients<T>> {
        if cache.encoder.revision != self.revision {
            return Err(Error::StaleCache("parameters changed since the forward pass".into()));
        }
        let n = cache.encoder.masked_rows.len();
        let e = self.config.embed_dim;
        let mut grads = self.zero_grads();
        let offset = 2 * self.encoder.len();
        let mut d = d_recon.clone();
        for (i, (layer, trace)) in self.decoder.iter().zip(&cache.decoder).enumerate().rev() {
            let g = layer.backward(&trace.input, &trace.pre, &d)?;
            grads.tensors[offset + 2 * i].add_assign(&g.weight)?;
            grads.tensors[offset + 2 * i + 1].add_assign(&g.bias)?;
            d = g.input;
        }
        let mut d_z = match d_emb {
            Some(g) => {
                if g.shape() != [n, e] {
                    return Err(shape_err(format!("embedding gradient {:?}, expected [{n}, {e}]", g.shape())));
                }
                g.clone()
            }
            None => Tensor::zeros(&[n, e]),
        };
        let (gr, gc) = (self.config.grid_rows, self.config.grid_cols);
        for (r, &k) in cache.decoded_rows.iter().enumerate() {
            let row = d.row(r);
            for (a, &b) in d_z.row_mut(k).iter_mut().zip(&row[..e]) {
                *a += b;
            }
            if self.config.neighbor_context {
                let nb: Vec<usize> = neighbors(k, gr, gc).collect();
                if nb.is_empty() {
                    continue;
                }
                let inv = T::one() / T::of(nb.len() as f64);
                for j in nb {
                    for (a, &b) in d_z.row_mut(j).iter_mut().zip(&row[e..]) {
                        *a += b * inv;
                    }
                }
            }
        }
        self.encoder_backward_into(&cache.encoder, d_z, &mut grads)?;
        Ok(grads)
    }
}
