//! "WTS1" parameter checkpoints.
//!
//! Little-endian: magic, then entries until end of file, each
//! u32 name length, UTF-8 name, u32 rank, rank × u32 dims, f32 data.
//! Model checkpoints carry a `meta.config` entry with the method code and
//! geometry.

use std::path::Path;

use csi_fusion_core::model::{Method, ModelConfig, TrainedModel};
use csi_fusion_core::nn::Tensor;

use crate::error::{put_f32s, read_file, write_file, Error, Reader, Result};

pub const MAGIC: &[u8; 4] = b"WTS1";
pub const META: &str = "meta.config";
const WHAT: &str = "WTS1 checkpoint";
const MAX_RANK: usize = 8;

pub fn encode_weights(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, t.data());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != MAGIC {
        return Err(Error::decode(WHAT, 0, "bad magic, expected \"WTS1\""));
    }
    let mut out = Vec::new();
    while !r.is_empty() {
        let name_len = r.u32_le()? as usize;
        let at = r.pos() as u64;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::decode(WHAT, at, "name is not UTF-8"))?
            .to_string();
        let rank = r.u32_le()? as usize;
        if rank > MAX_RANK {
            return Err(r.err(format!("rank {rank} of {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32_le()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| r.err(format!("{name} {shape:?} runs past end of file")))?;
        let data = r.f32s(count)?;
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let c = model.config;
    let meta = [
        f32::from(model.method.code()),
        c.t_w as f32,
        c.subcarriers as f32,
        c.n_classes as f32,
        c.n_receivers as f32,
    ];
    let mut tensors = vec![(
        META.to_string(),
        Tensor::from_vec(&[meta.len()], meta.to_vec()).expect("sized"),
    )];
    tensors.extend(model.named_tensors());
    encode_weights(&tensors)
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut tensors = decode_weights(bytes)?;
    let pos = tensors
        .iter()
        .position(|(n, _)| n == META)
        .ok_or_else(|| Error::decode(WHAT, 4, format!("no {META} entry")))?;
    let (_, meta) = tensors.remove(pos);
    let m = meta.data();
    let ok = m.len() == 5 && m.iter().all(|v| v.fract() == 0.0 && *v >= 0.0 && *v < 1e9);
    if !ok {
        return Err(Error::decode(WHAT, 4, format!("malformed {META} {m:?}")));
    }
    let method = Method::from_code(m[0] as u8)
        .filter(|_| m[0] < 256.0)
        .ok_or_else(|| Error::decode(WHAT, 4, format!("unknown method code {}", m[0])))?;
    let config = ModelConfig::new(m[1] as usize, m[2] as usize, m[3] as usize, m[4] as usize)?;
    Ok(TrainedModel::from_named(method, config, &tensors)?)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    write_file(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    decode_model(&read_file(path)?)
}
