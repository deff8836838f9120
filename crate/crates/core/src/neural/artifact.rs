//! Binary model artifact: `ACAM`, u32 LE format version, u32 LE header
//! length, JSON header, then every parameter tensor as little-endian f32 in
//! layout order.

use serde::{Deserialize, Serialize};

use super::{param_count, ModelConfig, NeuralError, TransformerClassifier};
use crate::corpus::Label;
use crate::textproc::EncodeOptions;

pub const MODEL_MAGIC: &[u8; 4] = b"ACAM";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAX_HEADER_LEN: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub class_order: Vec<Label>,
    pub vocab_hash: String,
    pub encoding: EncodeOptions,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_model(model: &TransformerClassifier<f32>, vocab_hash: &str, encoding: &EncodeOptions) -> Vec<u8> {
    let header = ModelHeader {
        config: model.config().clone(),
        class_order: Label::CLASS_ORDER.to_vec(),
        vocab_hash: vocab_hash.to_string(),
        encoding: encoding.clone(),
        tensors: model
            .layout()
            .iter()
            .map(|i| TensorEntry {
                name: i.name.clone(),
                shape: i.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, NeuralError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| NeuralError::Format("truncated preamble".into()))
}

pub fn read_model(bytes: &[u8]) -> Result<(TransformerClassifier<f32>, ModelHeader), NeuralError> {
    let fmt = |m: String| NeuralError::Format(m);
    if bytes.get(..4) != Some(MODEL_MAGIC.as_slice()) {
        return Err(fmt("missing ACAM magic".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(fmt(format!("unsupported format version {version}")));
    }
    let hlen = read_u32(bytes, 8)? as usize;
    if hlen > MAX_HEADER_LEN {
        return Err(fmt(format!("header length {hlen} too large")));
    }
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| fmt("truncated header".into()))?;
    let header: ModelHeader = serde_json::from_slice(body).map_err(|e| fmt(format!("header: {e}")))?;
    header.config.validate()?;
    if header.class_order != Label::CLASS_ORDER {
        return Err(fmt("unexpected class order".into()));
    }
    if header.encoding.max_len != header.config.max_len {
        return Err(fmt(format!(
            "encoding length {} differs from model length {}",
            header.encoding.max_len, header.config.max_len
        )));
    }
    let expected = param_count(&header.config).ok_or_else(|| fmt("model too large".into()))?;
    let data = &bytes[12 + hlen..];
    if Some(data.len()) != expected.checked_mul(4) {
        return Err(fmt(format!(
            "expected {} parameter bytes, found {}",
            expected.saturating_mul(4),
            data.len()
        )));
    }
    let params: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
        .collect();
    let model = TransformerClassifier::from_params(header.config.clone(), params)?;
    let declared_ok = header.tensors.len() == model.layout().len()
        && header
            .tensors
            .iter()
            .zip(model.layout())
            .all(|(t, i)| t.name == i.name && t.shape == i.shape);
    if !declared_ok {
        return Err(fmt("tensor table does not match the configuration".into()));
    }
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TransformerClassifier<f32> {
        TransformerClassifier::init(ModelConfig {
            vocab_size: 20,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 8,
            max_len: 16,
            ..Default::default()
        })
        .unwrap()
    }

    fn opts() -> EncodeOptions {
        EncodeOptions { max_len: 16, ..Default::default() }
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let bytes = write_model(&m, "abc", &opts());
        assert_eq!(&bytes[..4], b"ACAM");
        let (back, header) = read_model(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(header.vocab_hash, "abc");
        assert_eq!(header.class_order, vec![Label::NotCoachable, Label::Coachable]);
    }

    #[test]
    fn corrupt_artifacts_rejected() {
        let bytes = write_model(&model(), "abc", &opts());
        assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_model(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_model(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(read_model(&version).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(read_model(&nan).is_err());
        assert!(read_model(b"ACAM").is_err());
    }
}
