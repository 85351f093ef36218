//! Checkpoint container.
//!
//! Layout: one line of JSON header terminated by `\n`, then every parameter
//! array as little-endian `f64`, concatenated in header order. The header
//! records the format version, hyperparameters, the vocabulary hash the model
//! was trained against, and each array's name and shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Hyperparams, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub vocab_hash: String,
    pub arrays: Vec<ArrayEntry>,
}

pub fn encode_checkpoint(params: &ModelParams, vocab_hash: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        hyperparams: params.hyper.clone(),
        vocab_hash: vocab_hash.to_string(),
        arrays: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| ArrayEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(params.num_values() * 8);
    for v in params.tensors.iter().flat_map(|t| t.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointHeader)> {
    let ctx = "checkpoint";
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(ctx, "missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(ctx, e))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(ctx, format!("unsupported format_version {}", header.format_version)));
    }
    let body = &bytes[nl + 1..];
    let expected: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
    if body.len() != expected * 8 {
        return Err(Error::format(
            ctx,
            format!("payload has {} bytes, header describes {}", body.len(), expected * 8),
        ));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let tensors = header
        .arrays
        .iter()
        .map(|a| {
            let n = a.shape.iter().product();
            Tensor::new(a.shape.clone(), values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(&header.hyperparams, tensors)?;
    if let Some((stored, expected)) = header.arrays.iter().map(|a| &a.name).zip(&params.names).find(|(a, b)| a != b) {
        return Err(Error::format(ctx, format!("array `{stored}` found where `{expected}` belongs")));
    }
    Ok((params, header))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, vocab_hash: &str) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, vocab_hash)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let h = Hyperparams {
            embedding_size: 2,
            hidden_size: 3,
            representation_size: 2,
            mlp_hidden_size: 3,
            ..Hyperparams::new(3, vec![4, 5])
        };
        ModelParams::init(&h, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let bytes = encode_checkpoint(&p, "abc");
        let (q, header) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.vocab_hash, "abc");
        for (a, b) in p.tensors.iter().zip(&q.tensors) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(encode_checkpoint(&q, "abc"), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_checkpoint(&params(), "h");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_checkpoint(b"no header").is_err());
    }
}
