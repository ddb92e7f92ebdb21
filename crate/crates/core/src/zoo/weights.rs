//! `.csnw` weights files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CSNW" | version u8 (0x01) | header_len u32 | header JSON | f32 payload | CRC-32(payload) u32
//! ```
//!
//! The header carries the model name, window size, layer specs, normalization
//! statistics and a manifest of `{name, shape, offset}` entries, with byte
//! offsets into the payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{infer_features, LayerSpec, Model};
use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::scalar::Scalar;
use crate::signal::NormStats;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CSNW";
pub const VERSION: u8 = 0x01;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: String,
    window_size: usize,
    layers: Vec<LayerSpec>,
    norm: Option<NormStats>,
    /// Whether each layer's batch-norm running statistics were ever updated.
    stats_ready: Vec<bool>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn split_name(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("layers.")?;
    let (idx, tensor) = rest.split_once('.')?;
    Some((idx.parse().ok()?, tensor))
}

pub fn write_weights<F: Scalar>(m: &Model<F>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (i, p) in m.params.iter().enumerate() {
        for (name, t) in p.iter() {
            tensors.push(Entry { name: format!("layers.{i}.{name}"), shape: t.shape().to_vec(), offset: payload.len() });
            for v in t.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        model: m.name.clone(),
        window_size: m.window_size,
        layers: m.layers.clone(),
        norm: m.norm.clone(),
        stats_ready: m.params.iter().map(|p| p.stats_ready).collect(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(9 + json.len() + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn read_weights<F: Scalar>(bytes: &[u8]) -> Result<Model<F>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("magic"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = *bytes.get(4).ok_or(Error::Truncated("version"))?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len_bytes = bytes.get(5..9).ok_or(Error::Truncated("header length"))?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().expect("four bytes")) as usize;
    let json = bytes.get(9..9 + header_len).ok_or(Error::Truncated("header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Header(e.to_string()))?;

    let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    let rest = &bytes[9 + header_len..];
    if rest.len() < expected + 4 {
        return Err(Error::Truncated("payload"));
    }
    if rest.len() > expected + 4 {
        return Err(Error::Header(format!("{} trailing bytes after checksum", rest.len() - expected - 4)));
    }
    let (payload, crc) = rest.split_at(expected);
    let stored = u32::from_le_bytes(crc.try_into().expect("four bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let inputs = infer_features(&header.layers).map_err(|e| Error::Header(e.to_string()))?;
    if header.stats_ready.len() != header.layers.len() {
        return Err(Error::Header("stats_ready length differs from layer count".into()));
    }
    let mut params: Vec<LayerParams<F>> = header
        .stats_ready
        .iter()
        .map(|&ready| {
            let mut p = LayerParams::new();
            p.stats_ready = ready;
            p
        })
        .collect();
    for e in &header.tensors {
        let (layer, name) = split_name(&e.name).ok_or_else(|| Error::Header(format!("bad tensor name {:?}", e.name)))?;
        let n: usize = e.shape.iter().product();
        let bytes = payload
            .get(e.offset..e.offset + n * 4)
            .ok_or_else(|| Error::Header(format!("tensor {} outside payload", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes(c.try_into().expect("four bytes")) as f64))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Header(err.to_string()))?;
        params
            .get_mut(layer)
            .ok_or_else(|| Error::Header(format!("tensor {} for missing layer", e.name)))?
            .insert(name, t);
    }
    // every layer must carry exactly the tensors its spec initialises
    for (i, (spec, p)) in header.layers.iter().zip(&params).enumerate() {
        let want: LayerParams<f32> = spec.init_params(inputs[i], &mut ChaCha8Rng::seed_from_u64(0));
        let same = want.iter().count() == p.iter().count()
            && want.iter().all(|(k, t)| p.get(k).map(|q| q.shape() == t.shape()).unwrap_or(false));
        if !same {
            return Err(Error::Header(format!("layer {i} tensors do not match its spec")));
        }
    }
    Ok(Model { name: header.model, window_size: header.window_size, layers: header.layers, params, norm: header.norm })
}

pub fn save_weights<F: Scalar>(m: &Model<F>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_weights(m)?)?;
    Ok(())
}

pub fn load_weights<F: Scalar>(path: impl AsRef<Path>) -> Result<Model<F>> {
    read_weights(&fs::read(path)?)
}
