use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, BOS, EOS, PAD, SEP};
use super::{tokenize, TextError};
use crate::corpus::{Label, QuestionSpec, Transcript};

pub const MIN_SEQUENCE_LEN: usize = 8;

/// Which end of an over-long transcript is cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Drop the end of the transcript, keeping its beginning.
    #[default]
    Tail,
    /// Drop the beginning, keeping the end.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeOptions {
    pub max_len: usize,
    pub include_query: bool,
    pub truncation: Truncation,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            max_len: 512,
            include_query: true,
            truncation: Truncation::Tail,
        }
    }
}

/// Fixed-length model input: `BOS q.. SEP t.. EOS PAD..`, or `BOS t.. EOS PAD..`
/// without the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label: Option<Label>,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

pub fn transcript_tokens(transcript: &Transcript) -> Vec<String> {
    transcript
        .utterances
        .iter()
        .flat_map(|u| tokenize(&u.text))
        .collect()
}

/// Lays out already tokenized ids. The question is never truncated.
pub fn encode_ids(
    question: &[u32],
    transcript: &[u32],
    opts: &EncodeOptions,
    label: Option<Label>,
) -> Result<EncodedPair, TextError> {
    let l = opts.max_len;
    if l < MIN_SEQUENCE_LEN {
        return Err(TextError::InvalidParameter(format!(
            "sequence length must be at least {MIN_SEQUENCE_LEN}, got {l}"
        )));
    }
    let mut ids = Vec::with_capacity(l);
    ids.push(BOS);
    let budget = if opts.include_query {
        if question.len() + 3 > l {
            return Err(TextError::QuestionTooLong {
                tokens: question.len(),
                max_len: l,
            });
        }
        ids.extend_from_slice(question);
        ids.push(SEP);
        l - question.len() - 3
    } else {
        l - 2
    };
    let kept = transcript.len().min(budget);
    let slice = match opts.truncation {
        Truncation::Tail => &transcript[..kept],
        Truncation::Head => &transcript[transcript.len() - kept..],
    };
    ids.extend_from_slice(slice);
    ids.push(EOS);
    let real = ids.len();
    ids.resize(l, PAD);
    let mut mask = vec![1u8; real];
    mask.resize(l, 0);
    Ok(EncodedPair {
        input_ids: ids,
        attention_mask: mask,
        label,
    })
}

pub fn encode_tokens(
    question: &[String],
    transcript: &[String],
    vocab: &Vocabulary,
    opts: &EncodeOptions,
    label: Option<Label>,
) -> Result<EncodedPair, TextError> {
    encode_ids(&vocab.encode(question), &vocab.encode(transcript), opts, label)
}

pub fn encode_pair(
    question: &QuestionSpec,
    transcript: &Transcript,
    vocab: &Vocabulary,
    opts: &EncodeOptions,
    label: Option<Label>,
) -> Result<EncodedPair, TextError> {
    encode_tokens(
        &tokenize(&question.text),
        &transcript_tokens(transcript),
        vocab,
        opts,
        label,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: u32, base: u32) -> Vec<u32> {
        (0..n).map(|i| base + i).collect()
    }

    #[test]
    fn layout_with_query() {
        let opts = EncodeOptions {
            max_len: 32,
            ..Default::default()
        };
        let e = encode_ids(&ids(5, 10), &ids(10, 20), &opts, None).unwrap();
        let mut want = vec![BOS];
        want.extend(ids(5, 10));
        want.push(SEP);
        want.extend(ids(10, 20));
        want.push(EOS);
        want.extend(std::iter::repeat(PAD).take(14));
        assert_eq!(e.input_ids, want);
        assert_eq!(e.real_len(), 18);
    }

    #[test]
    fn transcript_truncated_to_budget() {
        let opts = EncodeOptions {
            max_len: 16,
            ..Default::default()
        };
        let e = encode_ids(&ids(5, 10), &ids(100, 100), &opts, None).unwrap();
        assert_eq!(&e.input_ids[7..15], &ids(8, 100)[..]);
        assert_eq!(e.input_ids[15], EOS);
        let head = EncodeOptions {
            truncation: Truncation::Head,
            ..opts
        };
        let e = encode_ids(&ids(5, 10), &ids(100, 100), &head, None).unwrap();
        assert_eq!(&e.input_ids[7..15], &ids(8, 192)[..]);
    }

    #[test]
    fn layout_without_query() {
        let opts = EncodeOptions {
            max_len: 16,
            include_query: false,
            ..Default::default()
        };
        let e = encode_ids(&ids(5, 10), &ids(100, 100), &opts, None).unwrap();
        assert_eq!(e.input_ids[0], BOS);
        assert_eq!(&e.input_ids[1..15], &ids(14, 100)[..]);
        assert_eq!(e.input_ids[15], EOS);
        assert_eq!(e.real_len(), 16);
    }

    #[test]
    fn question_too_long_and_short_l() {
        let opts = EncodeOptions {
            max_len: 8,
            ..Default::default()
        };
        assert!(matches!(
            encode_ids(&ids(6, 10), &[], &opts, None),
            Err(TextError::QuestionTooLong { .. })
        ));
        assert!(encode_ids(&ids(5, 10), &[], &opts, None).is_ok());
        let opts = EncodeOptions {
            max_len: 7,
            ..Default::default()
        };
        assert!(encode_ids(&[], &[], &opts, None).is_err());
    }

    proptest! {
        #[test]
        fn length_and_mask_invariants(
            q in proptest::collection::vec(5u32..50, 0..6),
            t in proptest::collection::vec(5u32..50, 0..80),
            l in 9usize..64,
            include_query: bool,
        ) {
            let opts = EncodeOptions { max_len: l, include_query, truncation: Truncation::Tail };
            let e = encode_ids(&q, &t, &opts, None).unwrap();
            prop_assert_eq!(e.input_ids.len(), l);
            prop_assert_eq!(e.attention_mask.len(), l);
            for (id, m) in e.input_ids.iter().zip(&e.attention_mask) {
                prop_assert_eq!(*m == 0, *id == PAD);
            }
        }

        #[test]
        fn transcript_prefix_shared(
            q in proptest::collection::vec(5u32..50, 0..6),
            t in proptest::collection::vec(5u32..50, 0..80),
            l in 9usize..64,
        ) {
            let with = encode_ids(&q, &t, &EncodeOptions { max_len: l, include_query: true, truncation: Truncation::Tail }, None).unwrap();
            let without = encode_ids(&q, &t, &EncodeOptions { max_len: l, include_query: false, truncation: Truncation::Tail }, None).unwrap();
            let a = &with.input_ids[q.len() + 2..with.real_len() - 1];
            let b = &without.input_ids[1..without.real_len() - 1];
            let n = a.len().min(b.len());
            prop_assert_eq!(&a[..n], &b[..n]);
            prop_assert_eq!(&a[..n], &t[..n]);
        }
    }
}
