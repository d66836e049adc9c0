//! `TVPR` weights container.
//!
//! ```text
//! "TVPR" | u32 version | u32 tensor_count
//! tensor_count × { u32 name_len | name | u8 dtype | u8 rank | rank × u32 extent | payload }
//! u32 metadata_len | metadata (JSON model config)
//! ```
//!
//! All integers and payloads are little-endian; dtype 0 is float32.

use std::collections::BTreeMap;
use std::path::Path;

use super::bytes::{put_f32s, put_u32, to_u32, Reader};
use crate::aggregate::HeadParams;
use crate::backbone::{BackboneWeights, BatchNorm, ConvBlock, PatchEmbed};
use crate::encoder::{EncoderLayer, EncoderWeights};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::numeric::{MlpWeights, MsaWeights, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TVPR";
pub const WEIGHTS_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

fn vec_tensor(v: &[f32]) -> Tensor<f32> {
    Tensor::new(&[v.len()], v.to_vec()).expect("non-empty vector")
}

/// Every tensor of the model under its container name, in a fixed order.
pub fn named_tensors(m: &ModelWeights<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    let mut push = |name: String, t: Tensor<f32>| out.push((name, t));
    for (i, (b, e)) in m.backbone.blocks.iter().zip(&m.backbone.embeds).enumerate() {
        let p = format!("backbone.block{i}");
        push(format!("{p}.kernel"), b.kernel.clone());
        push(format!("{p}.bn.mean"), vec_tensor(&b.bn.mean));
        push(format!("{p}.bn.var"), vec_tensor(&b.bn.var));
        push(format!("{p}.bn.gamma"), vec_tensor(&b.bn.gamma));
        push(format!("{p}.bn.beta"), vec_tensor(&b.bn.beta));
        push(format!("backbone.embed{i}.weight"), e.weight.clone());
        push(format!("backbone.embed{i}.bias"), vec_tensor(&e.bias));
    }
    for (i, l) in m.encoder.layers.iter().enumerate() {
        let p = format!("encoder.layer{i}");
        push(format!("{p}.ln1.gamma"), vec_tensor(&l.ln1_gamma));
        push(format!("{p}.ln1.beta"), vec_tensor(&l.ln1_beta));
        let a = &l.attn;
        for (n, w, b) in [("q", &a.wq, &a.bq), ("k", &a.wk, &a.bk), ("v", &a.wv, &a.bv), ("o", &a.wo, &a.bo)] {
            push(format!("{p}.attn.w{n}"), w.clone());
            push(format!("{p}.attn.b{n}"), vec_tensor(b));
        }
        push(format!("{p}.ln2.gamma"), vec_tensor(&l.ln2_gamma));
        push(format!("{p}.ln2.beta"), vec_tensor(&l.ln2_beta));
        push(format!("{p}.mlp.w1"), l.mlp.w1.clone());
        push(format!("{p}.mlp.b1"), vec_tensor(&l.mlp.b1));
        push(format!("{p}.mlp.w2"), l.mlp.w2.clone());
        push(format!("{p}.mlp.b2"), vec_tensor(&l.mlp.b2));
    }
    if let Some(cls) = &m.encoder.class_token {
        push("encoder.class_token".into(), vec_tensor(cls));
    }
    for (j, a) in m.head.attention.iter().enumerate() {
        push(format!("head.attention{j}"), vec_tensor(a));
    }
    push("head.reduction".into(), m.head.reduction.clone());
    out
}

pub fn encode_weights(m: &ModelWeights<f32>) -> Result<Vec<u8>> {
    m.validate()?;
    let tensors = named_tensors(m);
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    put_u32(&mut out, to_u32(tensors.len(), "tensor count")?);
    for (name, t) in &tensors {
        put_u32(&mut out, to_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.rank() as u8);
        for &e in t.shape() {
            put_u32(&mut out, to_u32(e, "extent")?);
        }
        put_f32s(&mut out, t.data());
    }
    let meta = serde_json::to_vec(&m.config)?;
    put_u32(&mut out, to_u32(meta.len(), "metadata length")?);
    out.extend_from_slice(&meta);
    Ok(out)
}

/// Tensor table and metadata of a container, without model assembly.
pub fn decode_tensors(buf: &[u8]) -> Result<(BTreeMap<String, Tensor<f32>>, ModelConfig)> {
    let mut r = Reader::new(buf);
    r.magic(WEIGHTS_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let at = r.offset();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(at, format!("tensor `{name}` has unknown dtype {dtype}")));
        }
        let at = r.offset();
        let rank = r.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::format(at, format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let at = r.offset();
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(at, format!("tensor `{name}` has invalid shape {shape:?}")))?;
        let data = r.f32s(numel, &format!("payload of `{name}`"))?;
        let t = Tensor::new(&shape, data).map_err(|e| Error::format(at, e.to_string()))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(at, format!("duplicate tensor `{name}`")));
        }
    }
    let at = r.offset();
    let len = r.u32("metadata length")? as usize;
    let meta = r.take(len, "metadata")?;
    let config: ModelConfig =
        serde_json::from_slice(meta).map_err(|e| Error::format(at + 4, format!("metadata: {e}")))?;
    r.finish()?;
    Ok((tensors, config))
}

struct Table(BTreeMap<String, Tensor<f32>>);

impl Table {
    fn tensor(&mut self, name: &str) -> Result<Tensor<f32>> {
        self.0.remove(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f32>> {
        let t = self.tensor(name)?;
        if t.rank() != 1 {
            return Err(Error::shape(format!("tensor `{name}` must be a vector, got {:?}", t.shape())));
        }
        Ok(t.into_data())
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<ModelWeights<f32>> {
    let (tensors, config) = decode_tensors(buf)?;
    config.validate()?;
    let mut t = Table(tensors);
    let mut blocks = Vec::with_capacity(4);
    let mut embeds = Vec::with_capacity(4);
    for i in 0..4 {
        let p = format!("backbone.block{i}");
        blocks.push(ConvBlock {
            kernel: t.tensor(&format!("{p}.kernel"))?,
            bn: BatchNorm {
                mean: t.vector(&format!("{p}.bn.mean"))?,
                var: t.vector(&format!("{p}.bn.var"))?,
                gamma: t.vector(&format!("{p}.bn.gamma"))?,
                beta: t.vector(&format!("{p}.bn.beta"))?,
            },
        });
        embeds.push(PatchEmbed {
            weight: t.tensor(&format!("backbone.embed{i}.weight"))?,
            bias: t.vector(&format!("backbone.embed{i}.bias"))?,
        });
    }
    let backbone = BackboneWeights {
        blocks,
        embeds,
        input_mean: config.input_mean.map(|v| v as f32),
        input_std: config.input_std.map(|v| v as f32),
        bn_eps: config.bn_eps as f32,
    };
    let mut layers = Vec::with_capacity(config.layers);
    for i in 0..config.layers {
        let p = format!("encoder.layer{i}");
        let mut proj = |n: &str| -> Result<(Tensor<f32>, Vec<f32>)> {
            Ok((t.tensor(&format!("{p}.attn.w{n}"))?, t.vector(&format!("{p}.attn.b{n}"))?))
        };
        let (wq, bq) = proj("q")?;
        let (wk, bk) = proj("k")?;
        let (wv, bv) = proj("v")?;
        let (wo, bo) = proj("o")?;
        layers.push(EncoderLayer {
            ln1_gamma: t.vector(&format!("{p}.ln1.gamma"))?,
            ln1_beta: t.vector(&format!("{p}.ln1.beta"))?,
            attn: MsaWeights { wq, bq, wk, bk, wv, bv, wo, bo },
            ln2_gamma: t.vector(&format!("{p}.ln2.gamma"))?,
            ln2_beta: t.vector(&format!("{p}.ln2.beta"))?,
            mlp: MlpWeights {
                w1: t.tensor(&format!("{p}.mlp.w1"))?,
                b1: t.vector(&format!("{p}.mlp.b1"))?,
                w2: t.tensor(&format!("{p}.mlp.w2"))?,
                b2: t.vector(&format!("{p}.mlp.b2"))?,
            },
        });
    }
    let class_token = if config.class_token { Some(t.vector("encoder.class_token")?) } else { None };
    let encoder = EncoderWeights { layers, class_token, heads: config.heads, ln_eps: config.ln_eps as f32 };
    let attention = (0..config.variant.maps())
        .map(|j| t.vector(&format!("head.attention{j}")))
        .collect::<Result<Vec<_>>>()?;
    let head = HeadParams { variant: config.variant, attention, reduction: t.tensor("head.reduction")? };
    if let Some(extra) = t.0.keys().next() {
        return Err(Error::format(0, format!("unexpected tensor `{extra}`")));
    }
    let model = ModelWeights { config, backbone, encoder, head };
    model.validate()?;
    Ok(model)
}

pub fn save_weights(m: &ModelWeights<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(m)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights<f32>> {
    decode_weights(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelWeights<f32> {
        let cfg = ModelConfig { dim: 8, layers: 2, heads: 2, taps: [1, 1, 2], ..Default::default() };
        ModelWeights::random(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = encode_weights(&m).unwrap();
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic_names_offset() {
        let mut bytes = encode_weights(&small()).unwrap();
        bytes[0] = b'X';
        let err = decode_weights(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        assert!(err.to_string().contains("offset 0"));
    }

    #[test]
    fn truncation_and_dtype_are_format_errors() {
        let bytes = encode_weights(&small()).unwrap();
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        // First record: name length at 12, name, then the dtype byte.
        let name_len = u32::from_le_bytes(bad[12..16].try_into().unwrap()) as usize;
        bad[16 + name_len] = 7;
        let err = decode_weights(&bad).unwrap_err();
        assert!(err.to_string().contains("dtype 7"), "{err}");
    }
}
