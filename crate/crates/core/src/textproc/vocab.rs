use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TextError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const SEP: u32 = 3;
pub const EOS: u32 = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<sep>", "<eos>"];

const VOCAB_FORMAT_VERSION: u32 = 1;

/// Token to id mapping with the five reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    max_size: usize,
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Keeps the most frequent tokens, ties broken lexicographically, until
    /// `max_size` ids (reserved ones included) are used.
    pub fn build<I, S>(docs: I, max_size: usize) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if max_size < RESERVED.len() {
            return Err(TextError::InvalidParameter(format!(
                "vocabulary max_size must be at least {}, got {max_size}",
                RESERVED.len()
            )));
        }
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        let docs: Vec<S> = docs.into_iter().collect();
        for doc in &docs {
            for t in doc.as_ref() {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED.len()];
        for (t, c) in ranked {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts, max_size))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, max_size: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            counts,
            index,
            max_size,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        self.index.get(token).map(|&i| self.counts[i as usize])
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile {
            version: VOCAB_FORMAT_VERSION,
            max_size: self.max_size,
            tokens: self.tokens.clone(),
            counts: self.counts.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, TextError> {
        let file: VocabFile =
            serde_json::from_slice(bytes).map_err(|e| TextError::Format(e.to_string()))?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(TextError::Format(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        if file.tokens.len() != file.counts.len() {
            return Err(TextError::Format("tokens and counts differ in length".into()));
        }
        if file.tokens.len() > file.max_size || file.tokens.len() < RESERVED.len() {
            return Err(TextError::Format("vocabulary size out of range".into()));
        }
        if file.tokens[..RESERVED.len()]
            .iter()
            .zip(RESERVED)
            .any(|(a, b)| a != b)
        {
            return Err(TextError::Format("reserved tokens missing".into()));
        }
        let vocab = Self::from_parts(file.tokens, file.counts, file.max_size);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(TextError::Format("duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(words: &[&str]) -> Vec<Vec<String>> {
        vec![words.iter().map(|s| s.to_string()).collect()]
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(docs(&["a", "a", "b"]), 6).unwrap();
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.count("a"), Some(2));
        assert_eq!(v.len(), 6);
        assert!(v.contains("b") || v.len() == 6);
    }

    #[test]
    fn ties_lexicographic() {
        let v = Vocabulary::build(docs(&["b", "a"]), 6).unwrap();
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.id("b"), UNK);
        let v = Vocabulary::build(docs(&["b", "a"]), 7).unwrap();
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
    }

    #[test]
    fn reserved_only() {
        let v = Vocabulary::build(docs(&["x", "y"]), 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("x"), UNK);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert!(Vocabulary::build(docs(&["x"]), 4).is_err());
    }

    #[test]
    fn json_roundtrip_and_hash() {
        let v = Vocabulary::build(docs(&["a", "b", "b"]), 10).unwrap();
        let back = Vocabulary::from_json_slice(v.to_json().as_bytes()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::from_json_slice(b"{}").is_err());
    }
}
