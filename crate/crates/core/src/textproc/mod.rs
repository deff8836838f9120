//! Tokenization, vocabularies, TF-IDF features and pairwise input encoding.

mod encode;
mod tensor_file;
mod tfidf;
mod tokenize;
mod vocab;

use thiserror::Error;

pub use encode::{
    encode_ids, encode_pair, encode_tokens, transcript_tokens, EncodeOptions, EncodedPair,
    Truncation, MIN_SEQUENCE_LEN,
};
pub use tensor_file::{decode_batch, encode_batch, TensorHeader, TensorSpec, TENSOR_MAGIC};
pub use tfidf::{SparseVec, TfidfModel};
pub use tokenize::{tokenize, word_count};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, SEP, UNK};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("question has {tokens} tokens, which does not fit in sequence length {max_len}")]
    QuestionTooLong { tokens: usize, max_len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed data: {0}")]
    Format(String),
}
