//! Flat binary container for batches of encoded pairs.
//!
//! Layout: `ACTB` magic, little-endian `u32` header length, a JSON header, then
//! the tensors back to back in header order, all little-endian:
//! `input_ids` (`u32`, `[n, L]`), `attention_mask` (`u8`, `[n, L]`) and
//! `labels` (`i8`, `[n]`, `-1` when unlabelled).

use serde::{Deserialize, Serialize};

use super::encode::EncodedPair;
use super::TextError;
use crate::corpus::Label;

pub const TENSOR_MAGIC: &[u8; 4] = b"ACTB";
const TENSOR_FORMAT_VERSION: u32 = 1;
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub version: u32,
    pub endianness: String,
    pub tensors: Vec<TensorSpec>,
}

fn expected_header(n: usize, l: usize) -> TensorHeader {
    TensorHeader {
        version: TENSOR_FORMAT_VERSION,
        endianness: "little".into(),
        tensors: vec![
            TensorSpec {
                name: "input_ids".into(),
                dtype: "u32".into(),
                shape: vec![n, l],
            },
            TensorSpec {
                name: "attention_mask".into(),
                dtype: "u8".into(),
                shape: vec![n, l],
            },
            TensorSpec {
                name: "labels".into(),
                dtype: "i8".into(),
                shape: vec![n],
            },
        ],
    }
}

pub fn encode_batch(pairs: &[EncodedPair]) -> Result<Vec<u8>, TextError> {
    let l = pairs.first().map_or(0, EncodedPair::len);
    if pairs.iter().any(|p| p.len() != l || p.attention_mask.len() != l) {
        return Err(TextError::Format("all pairs must share one length".into()));
    }
    let header = serde_json::to_vec(&expected_header(pairs.len(), l)).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + pairs.len() * (5 * l + 1));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in pairs {
        for id in &p.input_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    for p in pairs {
        out.extend_from_slice(&p.attention_mask);
    }
    for p in pairs {
        let v: i8 = p.label.map_or(-1, |l| l.index() as i8);
        out.push(v as u8);
    }
    Ok(out)
}

pub fn decode_batch(bytes: &[u8]) -> Result<Vec<EncodedPair>, TextError> {
    let bad = |m: &str| TextError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing tensor magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if header_len > MAX_HEADER_LEN || bytes.len() < 8 + header_len {
        return Err(bad("truncated header"));
    }
    let header: TensorHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| TextError::Format(e.to_string()))?;
    let (n, l) = match header.tensors.first().map(|t| t.shape.as_slice()) {
        Some([n, l]) => (*n, *l),
        _ => return Err(bad("unexpected tensor layout")),
    };
    if header != expected_header(n, l) {
        return Err(bad("unexpected tensor layout"));
    }
    let body = &bytes[8 + header_len..];
    let cells = n.checked_mul(l).ok_or_else(|| bad("shape overflow"))?;
    let want = cells
        .checked_mul(5)
        .and_then(|x| x.checked_add(n))
        .ok_or_else(|| bad("shape overflow"))?;
    if body.len() != want {
        return Err(bad("body length does not match header"));
    }
    let (ids_raw, rest) = body.split_at(cells * 4);
    let (mask_raw, labels_raw) = rest.split_at(cells);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let input_ids = ids_raw[i * l * 4..(i + 1) * l * 4]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let attention_mask = mask_raw[i * l..(i + 1) * l].to_vec();
        if attention_mask.iter().any(|&m| m > 1) {
            return Err(bad("mask values must be 0 or 1"));
        }
        let label = match labels_raw[i] as i8 {
            -1 => None,
            v => Some(Label::from_index(v as usize).ok_or_else(|| bad("label out of range"))?),
        };
        pairs.push(EncodedPair {
            input_ids,
            attention_mask,
            label,
        });
    }
    Ok(pairs)
}
