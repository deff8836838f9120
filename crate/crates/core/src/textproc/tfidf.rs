use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::TextError;

const TFIDF_FORMAT_VERSION: u32 = 1;

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from unsorted pairs; duplicate indices are summed.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_default() += v;
        }
        let (indices, values) = acc.into_iter().unzip();
        Self { dim, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, index: u32) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.last().copied()
    }
}

/// Document frequencies over a fitted training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    n_docs: usize,
    tokens: Vec<String>,
    df: Vec<u64>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct TfidfFile {
    version: u32,
    n_docs: usize,
    tokens: Vec<String>,
    df: Vec<u64>,
}

impl TfidfModel {
    pub fn fit<S: AsRef<[String]>>(docs: &[S]) -> Result<Self, TextError> {
        if docs.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut df: BTreeMap<&str, u64> = BTreeMap::new();
        for doc in docs {
            let distinct: BTreeSet<&str> = doc.as_ref().iter().map(String::as_str).collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let (tokens, df): (Vec<String>, Vec<u64>) =
            df.into_iter().map(|(t, c)| (t.to_string(), c)).unzip();
        Ok(Self::from_parts(docs.len(), tokens, df))
    }

    fn from_parts(n_docs: usize, tokens: Vec<String>, df: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            n_docs,
            tokens,
            df,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn df(&self, token: &str) -> Option<u64> {
        self.index.get(token).map(|&i| self.df[i as usize])
    }

    pub fn feature_index(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, feature: u32) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df[feature as usize] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Raw counts times idf, L2 normalized. Tokens unseen at fit time are dropped.
    pub fn transform(&self, doc: &[String]) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.index.get(t.as_str()) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v = SparseVec::new(self.dim());
        for (i, tf) in counts {
            v.indices.push(i);
            v.values.push(tf * self.idf(i));
        }
        let norm = v.norm();
        if norm > 0.0 {
            for x in &mut v.values {
                *x /= norm;
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("tfidf serializes")
    }

    pub(crate) fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_file()).expect("tfidf serializes")
    }

    fn to_file(&self) -> TfidfFile {
        TfidfFile {
            version: TFIDF_FORMAT_VERSION,
            n_docs: self.n_docs,
            tokens: self.tokens.clone(),
            df: self.df.clone(),
        }
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, TextError> {
        let file: TfidfFile =
            serde_json::from_slice(bytes).map_err(|e| TextError::Format(e.to_string()))?;
        Self::from_file(file)
    }

    pub(crate) fn from_value(value: serde_json::Value) -> Result<Self, TextError> {
        let file: TfidfFile =
            serde_json::from_value(value).map_err(|e| TextError::Format(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: TfidfFile) -> Result<Self, TextError> {
        if file.version != TFIDF_FORMAT_VERSION {
            return Err(TextError::Format(format!(
                "unsupported tfidf version {}",
                file.version
            )));
        }
        if file.tokens.len() != file.df.len() {
            return Err(TextError::Format("tokens and df differ in length".into()));
        }
        if file.n_docs == 0 {
            return Err(TextError::EmptyCorpus);
        }
        if file.df.iter().any(|&d| d == 0 || d as usize > file.n_docs) {
            return Err(TextError::Format("document frequency out of range".into()));
        }
        if file.tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TextError::Format("tokens must be sorted and unique".into()));
        }
        Ok(Self::from_parts(file.n_docs, file.tokens, file.df))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    /// Straight-line evaluation of the weighting formula over dense vectors,
    /// written without the model's index structures.
    fn brute_force(train: &[Vec<String>], doc: &[String]) -> Vec<(String, f64)> {
        let mut vocab: Vec<String> = train.iter().flatten().cloned().collect();
        vocab.sort();
        vocab.dedup();
        let n = train.len() as f64;
        let mut weights = Vec::new();
        for term in &vocab {
            let tf = doc.iter().filter(|t| *t == term).count() as f64;
            let df = train.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = ((1.0 + n) / (1.0 + df)).ln() + 1.0;
            weights.push(tf * idf);
        }
        let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        vocab
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w != 0.0)
            .map(|(t, w)| (t, w / norm))
            .collect()
    }

    #[test]
    fn single_token_doc_has_unit_weight() {
        let train = docs(&["hello hello"]);
        let m = TfidfModel::fit(&train).unwrap();
        let v = m.transform(&train[0]);
        assert_eq!(v.nnz(), 1);
        assert!((v.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn idf_for_token_in_every_doc() {
        let m = TfidfModel::fit(&docs(&["a b", "a c"])).unwrap();
        let a = m.feature_index("a").unwrap();
        assert_eq!(m.idf(a), 1.0);
    }

    #[test]
    fn four_doc_fixture_matches_brute_force() {
        let train = docs(&[
            "did the agent greet the customer",
            "the agent verified the email address",
            "customer was happy with the resolution",
            "agent greet agent thank you",
        ]);
        let m = TfidfModel::fit(&train).unwrap();
        let probe = tokenize("the agent greet the unknown customer customer");
        for doc in train.iter().chain(std::iter::once(&probe)) {
            let got = m.transform(doc);
            let want = brute_force(&train, doc);
            assert_eq!(got.nnz(), want.len());
            for (token, w) in want {
                let idx = m.feature_index(&token).unwrap();
                assert!((got.get(idx) - w).abs() < 1e-9, "{token}: {} vs {w}", got.get(idx));
            }
        }
    }

    #[test]
    fn empty_fit_rejected() {
        let empty: Vec<Vec<String>> = vec![];
        assert_eq!(TfidfModel::fit(&empty), Err(TextError::EmptyCorpus));
    }

    #[test]
    fn json_roundtrip() {
        let m = TfidfModel::fit(&docs(&["a b", "b c"])).unwrap();
        assert_eq!(TfidfModel::from_json_slice(m.to_json().as_bytes()).unwrap(), m);
        assert!(TfidfModel::from_json_slice(br#"{"version":1,"n_docs":1,"tokens":["a"],"df":[2]}"#).is_err());
    }

    proptest! {
        #[test]
        fn unit_norm_or_zero(
            train in proptest::collection::vec("[a-e]( [a-e]){0,6}", 1..5),
            doc in "[a-h]( [a-h]){0,8}",
        ) {
            let train: Vec<Vec<String>> = train.iter().map(|t| tokenize(t)).collect();
            let m = TfidfModel::fit(&train).unwrap();
            let d = tokenize(&doc);
            let v = m.transform(&d);
            let known = d.iter().any(|t| m.feature_index(t).is_some());
            if known {
                prop_assert!((v.norm() - 1.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(v.norm(), 0.0);
            }
        }
    }
}
