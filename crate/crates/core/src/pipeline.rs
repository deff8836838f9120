//! End-to-end glue: featurize a split, train any model kind, persist and
//! reload artifacts, and evaluate on a split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{derive_seed, train_baseline, BaselineConfig, BaselineError, BaselineModel, BaselineVariant, Prediction};
use crate::corpus::{Corpus, Label, LabeledPair, QuestionSpec, Transcript};
use crate::dataset::{DatasetSplit, Splits};
use crate::eval::{EvalError, EvalReport, Timing};
use crate::neural::{
    read_model, train, write_model, EpochLog, ModelConfig, NeuralError, TrainingConfig, TransformerClassifier,
    MODEL_MAGIC,
};
use crate::textproc::{
    encode_tokens, tokenize, transcript_tokens, EncodeOptions, EncodedPair, TextError, TfidfModel, Truncation,
    Vocabulary,
};

const BASELINE_FORMAT: &str = "coach-baseline";
const BASELINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("pair ({question_id}, {call_id}) refers to a missing question or transcript")]
    DanglingReference { question_id: String, call_id: String },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("vocabulary does not match the model: {0}")]
    VocabMismatch(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "nb")]
    NaiveBayes,
    #[serde(alias = "svm")]
    LinearSvm,
    #[serde(alias = "tree")]
    DecisionTree,
    #[serde(alias = "forest")]
    RandomForest,
    Transformer,
}

impl ModelKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "nb",
            ModelKind::LinearSvm => "svm",
            ModelKind::DecisionTree => "tree",
            ModelKind::RandomForest => "forest",
            ModelKind::Transformer => "transformer",
        }
    }

    fn baseline_variant(self) -> Option<BaselineVariant> {
        match self {
            ModelKind::NaiveBayes => Some(BaselineVariant::NaiveBayes),
            ModelKind::LinearSvm => Some(BaselineVariant::LinearSvm),
            ModelKind::DecisionTree => Some(BaselineVariant::DecisionTree),
            ModelKind::RandomForest => Some(BaselineVariant::RandomForest),
            ModelKind::Transformer => None,
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nb" | "naive_bayes" => Ok(ModelKind::NaiveBayes),
            "svm" | "linear_svm" => Ok(ModelKind::LinearSvm),
            "tree" | "decision_tree" => Ok(ModelKind::DecisionTree),
            "forest" | "random_forest" => Ok(ModelKind::RandomForest),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSettings {
    /// `vocab_size` is replaced by the size of the fitted vocabulary.
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub vocab_max_size: usize,
    pub truncation: Truncation,
}

impl Default for TransformerSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            vocab_max_size: 20_000,
            truncation: Truncation::Tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Whether the question is part of the model input.
    pub include_query: bool,
    pub baseline: BaselineConfig,
    pub transformer: TransformerSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            include_query: true,
            baseline: BaselineConfig::default(),
            transformer: TransformerSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Derives every component seed from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.baseline.seed = derive_seed(seed, 0);
        self.transformer.model.seed = derive_seed(seed, 1);
        self.transformer.training.seed = derive_seed(seed, 2);
        self
    }

    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            max_len: self.transformer.model.max_len,
            include_query: self.include_query,
            truncation: self.transformer.truncation,
        }
    }
}

/// Token views of one pair.
struct PairTokens {
    question: Vec<String>,
    transcript: Vec<String>,
}

fn resolve<'c>(corpus: &'c Corpus, p: &LabeledPair) -> Result<(&'c QuestionSpec, &'c Transcript), PipelineError> {
    match (corpus.questions.get(&p.question_id), corpus.transcripts.get(&p.call_id)) {
        (Some(q), Some(t)) => Ok((q, t)),
        _ => Err(PipelineError::DanglingReference {
            question_id: p.question_id.clone(),
            call_id: p.call_id.clone(),
        }),
    }
}

fn pair_tokens(question: &QuestionSpec, transcript: &Transcript) -> PairTokens {
    PairTokens {
        question: tokenize(&question.text),
        transcript: transcript_tokens(transcript),
    }
}

fn split_tokens(corpus: &Corpus, split: &DatasetSplit) -> Result<Vec<(PairTokens, Label)>, PipelineError> {
    split
        .pairs
        .iter()
        .map(|p| {
            let (q, t) = resolve(corpus, p)?;
            Ok((pair_tokens(q, t), p.label))
        })
        .collect()
}

fn baseline_doc(tokens: &PairTokens, include_query: bool) -> Vec<String> {
    if include_query {
        tokens.question.iter().chain(&tokens.transcript).cloned().collect()
    } else {
        tokens.transcript.clone()
    }
}

/// TF-IDF featurizer plus classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineArtifact {
    pub tfidf: TfidfModel,
    pub include_query: bool,
    pub model: BaselineModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineFile {
    format: String,
    version: u32,
    include_query: bool,
    tfidf: serde_json::Value,
    model: BaselineModel,
}

impl BaselineArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&BaselineFile {
            format: BASELINE_FORMAT.into(),
            version: BASELINE_FORMAT_VERSION,
            include_query: self.include_query,
            tfidf: self.tfidf.to_value(),
            model: self.model.clone(),
        })
        .expect("baseline artifact serializes")
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, PipelineError> {
        let file: BaselineFile =
            serde_json::from_slice(bytes).map_err(|e| PipelineError::Format(e.to_string()))?;
        if file.format != BASELINE_FORMAT || file.version != BASELINE_FORMAT_VERSION {
            return Err(PipelineError::Format(format!(
                "unsupported baseline artifact {} v{}",
                file.format, file.version
            )));
        }
        let tfidf = TfidfModel::from_value(file.tfidf)?;
        file.model.validate()?;
        if file.model.dim() != tfidf.dim() {
            return Err(PipelineError::Format(format!(
                "model dimension {} differs from featurizer dimension {}",
                file.model.dim(),
                tfidf.dim()
            )));
        }
        Ok(Self {
            tfidf,
            include_query: file.include_query,
            model: file.model,
        })
    }
}

/// Transformer plus the vocabulary and encoding it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralArtifact {
    pub model: TransformerClassifier<f32>,
    pub vocab: Vocabulary,
    pub encoding: EncodeOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Baseline(BaselineArtifact),
    Transformer(NeuralArtifact),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub epochs: Option<Vec<EpochLog>>,
    pub best_epoch: Option<usize>,
}

pub fn vocab_sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_os_string();
    s.push(".vocab.json");
    PathBuf::from(s)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Baseline(b) => match b.model.variant() {
                BaselineVariant::NaiveBayes => ModelKind::NaiveBayes,
                BaselineVariant::LinearSvm => ModelKind::LinearSvm,
                BaselineVariant::DecisionTree => ModelKind::DecisionTree,
                BaselineVariant::RandomForest => ModelKind::RandomForest,
            },
            TrainedModel::Transformer(_) => ModelKind::Transformer,
        }
    }

    /// Label and `Coachable` probability for one pair.
    pub fn predict(&self, question: &QuestionSpec, transcript: &Transcript) -> Result<Prediction, PipelineError> {
        let tokens = pair_tokens(question, transcript);
        self.predict_tokens(&tokens)
    }

    fn predict_tokens(&self, tokens: &PairTokens) -> Result<Prediction, PipelineError> {
        match self {
            TrainedModel::Baseline(b) => {
                let x = b.tfidf.transform(&baseline_doc(tokens, b.include_query));
                Ok(b.model.predict(&x)?)
            }
            TrainedModel::Transformer(n) => {
                let enc = encode_tokens(&tokens.question, &tokens.transcript, &n.vocab, &n.encoding, None)?;
                let p = n.model.predict(&enc)?;
                Ok(Prediction {
                    label: p.label,
                    score: p.probs[Label::Coachable.index()],
                })
            }
        }
    }

    /// Writes the artifact and returns every file written.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let write = |p: &Path, bytes: &[u8]| std::fs::write(p, bytes).map_err(|e| PipelineError::io(p, e));
        match self {
            TrainedModel::Baseline(b) => {
                write(path, b.to_json().as_bytes())?;
                Ok(vec![path.to_path_buf()])
            }
            TrainedModel::Transformer(n) => {
                write(path, &write_model(&n.model, &n.vocab.hash(), &n.encoding))?;
                let side = vocab_sidecar_path(path);
                write(&side, n.vocab.to_json().as_bytes())?;
                Ok(vec![path.to_path_buf(), side])
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        if bytes.starts_with(MODEL_MAGIC) {
            let side = vocab_sidecar_path(path);
            let vocab_bytes = std::fs::read(&side).map_err(|e| PipelineError::io(&side, e))?;
            Self::transformer_from_bytes(&bytes, &vocab_bytes)
        } else {
            Ok(TrainedModel::Baseline(BaselineArtifact::from_json_slice(&bytes)?))
        }
    }

    pub fn transformer_from_bytes(model: &[u8], vocab: &[u8]) -> Result<Self, PipelineError> {
        let (model, header) = read_model(model)?;
        let vocab = Vocabulary::from_json_slice(vocab)?;
        if vocab.hash() != header.vocab_hash {
            return Err(PipelineError::VocabMismatch("hash differs from the model header".into()));
        }
        if vocab.len() != model.config().vocab_size {
            return Err(PipelineError::VocabMismatch(format!(
                "{} tokens for a model with vocab_size {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(TrainedModel::Transformer(NeuralArtifact {
            model,
            vocab,
            encoding: header.encoding,
        }))
    }
}

fn encode_split(
    items: &[(PairTokens, Label)],
    vocab: &Vocabulary,
    opts: &EncodeOptions,
) -> Result<Vec<EncodedPair>, PipelineError> {
    items
        .iter()
        .map(|(t, l)| Ok(encode_tokens(&t.question, &t.transcript, vocab, opts, Some(*l))?))
        .collect()
}

/// Fits the featurizer on the training split and trains `kind`. The
/// transformer additionally uses the validation split for snapshot selection.
pub fn train_model(
    kind: ModelKind,
    corpus: &Corpus,
    splits: &Splits,
    cfg: &PipelineConfig,
) -> Result<(TrainedModel, TrainSummary), PipelineError> {
    let train_items = split_tokens(corpus, &splits.train)?;
    if train_items.is_empty() {
        return Err(PipelineError::EmptySplit("train"));
    }
    let mut summary = TrainSummary {
        kind,
        train_pairs: train_items.len(),
        validation_pairs: splits.validation.pairs.len(),
        epochs: None,
        best_epoch: None,
    };
    if let Some(variant) = kind.baseline_variant() {
        let docs: Vec<Vec<String>> = train_items.iter().map(|(t, _)| baseline_doc(t, cfg.include_query)).collect();
        let tfidf = TfidfModel::fit(&docs)?;
        let x: Vec<_> = docs.iter().map(|d| tfidf.transform(d)).collect();
        let y: Vec<Label> = train_items.iter().map(|(_, l)| *l).collect();
        let model = train_baseline(variant, &x, &y, &cfg.baseline)?;
        let artifact = BaselineArtifact {
            tfidf,
            include_query: cfg.include_query,
            model,
        };
        return Ok((TrainedModel::Baseline(artifact), summary));
    }

    let val_items = split_tokens(corpus, &splits.validation)?;
    let settings = &cfg.transformer;
    let vocab_docs = train_items.iter().map(|(t, _)| {
        if cfg.include_query {
            t.question.iter().chain(&t.transcript).cloned().collect::<Vec<_>>()
        } else {
            t.transcript.clone()
        }
    });
    let vocab = Vocabulary::build(vocab_docs, settings.vocab_max_size)?;
    let opts = cfg.encode_options();
    let train_enc = encode_split(&train_items, &vocab, &opts)?;
    let val_enc = encode_split(&val_items, &vocab, &opts)?;
    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..settings.model.clone()
    };
    let model = TransformerClassifier::<f32>::init(model_cfg)?;
    let outcome = train(model, &train_enc, &val_enc, &settings.training)?;
    summary.epochs = Some(outcome.log);
    summary.best_epoch = Some(outcome.best_epoch);
    Ok((
        TrainedModel::Transformer(NeuralArtifact {
            model: outcome.model,
            vocab,
            encoding: opts,
        }),
        summary,
    ))
}

/// Predictions for every pair of a split, with per-pair scoring times.
pub fn predict_split(
    model: &TrainedModel,
    corpus: &Corpus,
    split: &DatasetSplit,
) -> Result<(Vec<Prediction>, Vec<f64>), PipelineError> {
    let mut preds = Vec::with_capacity(split.pairs.len());
    let mut micros = Vec::with_capacity(split.pairs.len());
    for p in &split.pairs {
        let (q, t) = resolve(corpus, p)?;
        let start = Instant::now();
        preds.push(model.predict(q, t)?);
        micros.push(start.elapsed().as_secs_f64() * 1e6);
    }
    Ok((preds, micros))
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn evaluate_model(
    model_id: &str,
    model: &TrainedModel,
    corpus: &Corpus,
    split: &DatasetSplit,
    config: serde_json::Value,
) -> Result<EvalReport, PipelineError> {
    let (preds, micros) = predict_split(model, corpus, split)?;
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let questions: BTreeMap<String, QuestionSpec> = corpus.questions.clone();
    Ok(EvalReport::build(
        model_id,
        &labels,
        &split.pairs,
        &questions,
        config,
        Timing {
            p50_scoring_us: (median(micros) * 100.0).round() / 100.0,
        },
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{balance_per_question, make_splits, SplitConfig};
    use crate::synth::marker_corpus;

    fn data() -> (Corpus, Splits) {
        let corpus = marker_corpus(160, 4, 5);
        let pairs = balance_per_question(&corpus.labeled_pairs(), 2.0, 1).unwrap();
        let splits = make_splits(&pairs, &SplitConfig { seed: 1, ..Default::default() }).unwrap();
        (corpus, splits)
    }

    #[test]
    fn model_kind_names() {
        for k in ["nb", "svm", "tree", "forest", "transformer"] {
            assert_eq!(ModelKind::from_str(k).unwrap().short_name(), k);
        }
        assert!(ModelKind::from_str("gbm").is_err());
    }

    #[test]
    fn baseline_train_save_load_predict() {
        let (corpus, splits) = data();
        let cfg = PipelineConfig::default().with_seed(3);
        let (model, summary) = train_model(ModelKind::NaiveBayes, &corpus, &splits, &cfg).unwrap();
        assert_eq!(summary.train_pairs, splits.train.pairs.len());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nb.json");
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
        let report = evaluate_model("nb", &back, &corpus, &splits.test, serde_json::json!({})).unwrap();
        assert!(report.metrics.accuracy >= 90.0, "{:?}", report.metrics);
    }

    #[test]
    fn transformer_artifact_roundtrip_and_vocab_check() {
        let (corpus, splits) = data();
        let mut cfg = PipelineConfig::default().with_seed(4);
        cfg.transformer.model = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            max_len: 64,
            ..cfg.transformer.model
        };
        cfg.transformer.training.epochs = 1;
        let (model, summary) = train_model(ModelKind::Transformer, &corpus, &splits, &cfg).unwrap();
        assert_eq!(summary.epochs.as_ref().unwrap().len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.acam");
        let files = model.save(&path).unwrap();
        assert_eq!(files.len(), 2);
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
        let q = &corpus.questions["q01"];
        let t = corpus.transcripts.values().next().unwrap();
        assert_eq!(back.predict(q, t).unwrap(), model.predict(q, t).unwrap());

        std::fs::write(vocab_sidecar_path(&path), Vocabulary::build([vec!["x".to_string()]], 10).unwrap().to_json())
            .unwrap();
        assert!(matches!(TrainedModel::load(&path), Err(PipelineError::VocabMismatch(_))));
    }

    #[test]
    fn dangling_pairs_reported() {
        let (corpus, mut splits) = data();
        splits.test.pairs[0].call_id = "missing".into();
        let (model, _) = train_model(ModelKind::NaiveBayes, &corpus, &splits, &PipelineConfig::default()).unwrap();
        assert!(matches!(
            evaluate_model("nb", &model, &corpus, &splits.test, serde_json::json!({})),
            Err(PipelineError::DanglingReference { .. })
        ));
    }
}
