//! `CLPC` checkpoint files.
//!
//! Layout (little endian): magic, u16 version, u32 header length, TOML header
//! text (model config and run state), u32 tensor count, then a directory of
//! `(u16 name length, name, u8 dtype, u8 rank, u64 dims..., u64 offset)`
//! entries, the tensor payloads, and finally a 32-byte SHA-256 of everything
//! before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::encoder::DualEncoder;
use super::ModelError;
use crate::numerics::{AdamWConfig, DType, OptimizerState, ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CLPC";
pub const VERSION: u16 = 1;

/// Run position. Every random stream is derived from `(seed, step)`, so these
/// three numbers are the whole RNG state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub seed: u64,
    pub step: u64,
    pub samples_seen: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    state: RunState,
    model: ModelConfig,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub state: RunState,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Checkpoint(format!("truncated at byte {} (wanted {} more)", self.pos, n)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_values<T: Scalar>(dtype: DType, bytes: &[u8]) -> Vec<T> {
    match dtype {
        _ if dtype == T::DTYPE => bytes.chunks_exact(dtype.size()).map(T::read_le).collect(),
        DType::F32 => bytes.chunks_exact(4).map(|b| T::lit(f32::read_le(b) as f64)).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|b| T::lit(f64::read_le(b))).collect(),
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &DualEncoder<T>, optimizer: Option<&OptimizerState<T>>, state: RunState) -> Self {
        Self { config: model.config.clone(), params: model.params.clone(), optimizer: optimizer.cloned(), state }
    }

    pub fn into_model(self) -> Result<(DualEncoder<T>, Option<OptimizerState<T>>, RunState), ModelError> {
        let model = DualEncoder::from_params(self.config, self.params)?;
        Ok((model, self.optimizer, self.state))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            state: self.state,
            model: self.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { config: o.config, step: o.step }),
        };
        let text = toml::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;

        let mut tensors: Vec<(String, &Tensor<T>)> =
            self.params.iter().map(|(_, name, t)| (name.to_string(), t)).collect();
        if let Some(opt) = &self.optimizer {
            for (id, name, _) in self.params.iter() {
                tensors.push((format!("optimizer.m/{name}"), &opt.m[id.0]));
            }
            for (id, name, _) in self.params.iter() {
                tensors.push((format!("optimizer.v/{name}"), &opt.v[id.0]));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.code());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (t.len() * T::DTYPE.size()) as u64;
        }
        for (_, t) in &tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 4 + 2 + 32 || &bytes[..4] != MAGIC {
            return Err(ModelError::Checkpoint("missing CLPC magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::Checkpoint("checksum mismatch".into()));
        }
        let mut cur = Cursor { bytes: body, pos: 4 };
        let version = cur.u16()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", version)));
        }
        let text_len = cur.u32()? as usize;
        let text = std::str::from_utf8(cur.take(text_len)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let header: Header = toml::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;

        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            let dtype = DType::from_code(cur.u8()?)
                .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name}: unknown dtype")))?;
            let rank = cur.u8()? as usize;
            let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let offset = cur.u64()? as usize;
            entries.push((name, dtype, shape, offset));
        }
        let payload = &body[cur.pos..];
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, dtype, shape, offset) in entries {
            let len = shape.iter().product::<usize>() * dtype.size();
            let raw = payload
                .get(offset..offset + len)
                .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} runs past the payload")))?;
            let t = Tensor::new(&shape, read_values(dtype, raw))?;
            if name.starts_with("optimizer.m/") {
                m.push(t);
            } else if name.starts_with("optimizer.v/") {
                v.push(t);
            } else {
                params.add(name, t);
            }
        }
        let optimizer = match header.optimizer {
            Some(o) if m.len() == params.len() && v.len() == params.len() => {
                Some(OptimizerState { config: o.config, step: o.step, m, v })
            }
            Some(_) => return Err(ModelError::Checkpoint("optimizer moments do not cover every parameter".into())),
            None => None,
        };
        Ok(Self { config: header.model, params, optimizer, state: header.state })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_bits_and_state() {
        let model = DualEncoder::<f32>::new(ModelConfig::preset("tiny").unwrap(), 3).unwrap();
        let mut opt = OptimizerState::new(AdamWConfig::default(), &model.params);
        opt.step = 5;
        opt.m[0].data_mut()[0] = 0.25;
        let state = RunState { seed: 3, step: 5, samples_seen: 640 };
        let ck = Checkpoint::from_model(&model, Some(&opt), state);
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.state, state);
        assert_eq!(back.config, model.config);
        let o = back.optimizer.as_ref().unwrap();
        assert_eq!((o.step, o.m[0].data()[0]), (5, 0.25));
        for ((_, a, x), (_, b, y)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(a, b);
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let model = DualEncoder::<f32>::new(ModelConfig::preset("tiny").unwrap(), 3).unwrap();
        let mut bytes = Checkpoint::from_model(&model, None, RunState::default()).to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"nope").is_err());
    }
}
