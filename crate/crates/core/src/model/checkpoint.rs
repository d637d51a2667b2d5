//! AMLC checkpoints.
//!
//! Layout (little-endian): `"AMLC"`, version `u8`, metadata length `u32`,
//! metadata JSON, epoch `u64`, seed `u64`, block count `u32`, then per block a
//! `u16` name length, the UTF-8 name and an AMLT tensor; finally a CRC32 of
//! everything before it.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::{read_tensor, write_tensor, Scalar, Tensor};

use super::autoencoder::{MlpAutoencoder, ModelConfig};
use super::head::SegHead;
use super::layers::Linear;
use super::optim::{AdamWConfig, AdamWState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMLC";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Config echo plus the architecture and optimizer settings.
    pub meta: Value,
    pub epoch: u64,
    pub seed: u64,
    pub blocks: Vec<(String, Tensor<f64>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt("truncated checkpoint"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(meta: Value, epoch: u64, seed: u64) -> Self {
        Self { meta, epoch, seed, blocks: Vec::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("block name {name} too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t)?;
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 {
            return Err(corrupt("truncated checkpoint"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad checkpoint magic"));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::Version { found: bytes[4], expected: CHECKPOINT_VERSION });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cur = Cursor { buf: &body[5..] };
        let meta_len = cur.u32()? as usize;
        let meta = serde_json::from_slice(cur.take(meta_len)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let epoch = cur.u64()?;
        let seed = cur.u64()?;
        let count = cur.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| corrupt("block name is not UTF-8"))?;
            let tensor = read_tensor(&mut cur.buf)?;
            blocks.push((name, tensor));
        }
        if !cur.buf.is_empty() {
            return Err(corrupt("trailing bytes before checksum"));
        }
        Ok(Self { meta, epoch, seed, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn put<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.blocks.push((name.into(), t.cast()));
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.cast())
            .ok_or_else(|| corrupt(format!("missing block {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    fn meta_field<V: serde::de::DeserializeOwned>(&self, key: &str) -> Result<V> {
        let v = self.meta.get(key).ok_or_else(|| corrupt(format!("metadata lacks {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| corrupt(format!("metadata {key}: {e}")))
    }

    pub fn put_model<T: Scalar>(&mut self, model: &MlpAutoencoder<T>) -> Result<()> {
        self.set_meta("model", serde_json::to_value(model.config)?);
        for (name, t) in model.parameter_names().into_iter().zip(model.parameters()) {
            self.put(name, t);
        }
        Ok(())
    }

    pub fn model<T: Scalar>(&self) -> Result<MlpAutoencoder<T>> {
        let config: ModelConfig = self.meta_field("model")?;
        let mut model = MlpAutoencoder::new(config, &mut crate::numerics::Rng::new(0))?;
        let names = model.parameter_names();
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let t = self.get::<T>(name)?;
            if t.shape() != slot.shape() {
                return Err(corrupt(format!("block {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn put_optimizer<T: Scalar>(&mut self, prefix: &str, names: &[String], state: &AdamWState<T>) -> Result<()> {
        self.set_meta(&format!("{prefix}.config"), serde_json::to_value(state.config)?);
        self.put(format!("{prefix}.step"), &Tensor::vector(vec![state.step as f64])?);
        for (i, name) in names.iter().enumerate() {
            self.put(format!("{prefix}.m.{name}"), &state.m[i]);
            self.put(format!("{prefix}.v.{name}"), &state.v[i]);
        }
        Ok(())
    }

    pub fn optimizer<T: Scalar>(&self, prefix: &str, names: &[String]) -> Result<AdamWState<T>> {
        let config: AdamWConfig = self.meta_field(&format!("{prefix}.config"))?;
        let step = self.get::<f64>(&format!("{prefix}.step"))?.data()[0] as u64;
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in names {
            m.push(self.get(&format!("{prefix}.m.{name}"))?);
            v.push(self.get(&format!("{prefix}.v.{name}"))?);
        }
        Ok(AdamWState { config, step, m, v })
    }

    pub fn put_head<T: Scalar>(&mut self, head: &SegHead<T>) {
        self.put("head.weight", &head.linear.weight);
        self.put("head.bias", &head.linear.bias);
    }

    pub fn head<T: Scalar>(&self) -> Result<SegHead<T>> {
        Ok(SegHead {
            linear: Linear {
                weight: self.get("head.weight")?,
                bias: self.get("head.bias")?,
                activation: super::layers::Activation::Identity,
            },
        })
    }

    pub fn set_meta(&mut self, key: &str, value: Value) {
        if !self.meta.is_object() {
            self.meta = Value::Object(Default::default());
        }
        self.meta.as_object_mut().expect("object").insert(key.to_string(), value);
    }
}

/// Model + optimizer snapshot at an epoch boundary.
pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &MlpAutoencoder<T>,
    optimizer: &AdamWState<T>,
    epoch: u64,
    seed: u64,
    config_echo: Value,
) -> Result<()> {
    let mut ck = Checkpoint::new(serde_json::json!({ "config": config_echo }), epoch, seed);
    ck.put_model(model)?;
    ck.put_optimizer("adam", &model.parameter_names(), optimizer)?;
    ck.save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(MlpAutoencoder<T>, AdamWState<T>, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model()?;
    let opt = ck.optimizer("adam", &model.parameter_names())?;
    Ok((model, opt, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn fixture() -> (MlpAutoencoder, AdamWState) {
        let cfg = ModelConfig { patch_dim: 4, hidden_dim: 3, embed_dim: 2, neighbor_context: true, grid_rows: 2, grid_cols: 2 };
        let mut model = MlpAutoencoder::new(cfg, &mut Rng::new(3)).unwrap();
        model.mask_token = Tensor::vector(vec![0.1, 0.2, 0.3, 1.0 / 3.0]).unwrap();
        let mut opt = AdamWState::new(AdamWConfig::default(), &model.parameters());
        let grads: Vec<Tensor> = model.parameters().iter().map(|p| p.map(|x| x * 0.5 + 0.01)).collect();
        opt.step(model.parameters_mut(), &grads, 1e-3).unwrap();
        (model, opt)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (model, opt) = fixture();
        let a = dir.path().join("a.amlc");
        let b = dir.path().join("b.amlc");
        save_checkpoint(&a, &model, &opt, 7, 42, serde_json::json!({"lr": 1e-4, "seed": 42})).unwrap();
        let (m2, o2, ck) = load_checkpoint::<f64>(&a).unwrap();
        assert_eq!(m2.parameters(), model.parameters());
        assert_eq!(o2, opt);
        assert_eq!((ck.epoch, ck.seed), (7, 42));
        save_checkpoint(&b, &m2, &o2, ck.epoch, ck.seed, ck.meta["config"].clone()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_and_flipped_files_are_corrupt() {
        let (model, opt) = fixture();
        let mut ck = Checkpoint::new(serde_json::json!({}), 1, 1);
        ck.put_model(&model).unwrap();
        ck.put_optimizer("adam", &model.parameter_names(), &opt).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Corrupt(_))));
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Version { found: 2, .. })));
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn head_round_trip() {
        let head: SegHead = SegHead::new(5, &mut Rng::new(1)).unwrap();
        let mut ck = Checkpoint::new(serde_json::json!({}), 0, 0);
        ck.put_head(&head);
        let back: SegHead = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap().head().unwrap();
        assert_eq!(back, head);
    }
}
