//! HTTP API and command-line front end for the call coaching recommender.

pub mod cli;
pub mod config;
pub mod http;
pub mod state;

use std::path::{Path, PathBuf};

use coach_core::corpus::CorpusError;
use coach_core::dataset::DatasetError;
use coach_core::pipeline::PipelineError;
use coach_core::recommend::RecommendError;
use serde::Serialize;
use thiserror::Error;

pub use config::ServiceConfig;
pub use state::AppState;

#[derive(Debug, Error)]
pub enum ServiceError {
    /// Bad input from the caller: arguments, config values or request bodies.
    #[error("{0}")]
    Validation(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Validation(_) => "validation",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Io { .. } => "io",
            ServiceError::Corpus(_) => "corpus",
            ServiceError::Dataset(_) => "dataset",
            ServiceError::Pipeline(_) => "pipeline",
            ServiceError::Recommend(e) => recommend_code(e),
            ServiceError::Internal(_) => "internal",
        }
    }
}

pub(crate) fn recommend_code(e: &RecommendError) -> &'static str {
    match e {
        RecommendError::QuestionNotAllowed(_) => "question_not_allowed",
        RecommendError::NothingEligible(_) => "nothing_eligible",
        RecommendError::UnknownBatchItem { .. } => "unknown_batch_item",
        RecommendError::DuplicateDecision { .. } => "duplicate_decision",
        RecommendError::InvalidPolicy(_) => "invalid_policy",
        RecommendError::InvalidDecision(_) => "invalid_decision",
        RecommendError::Scoring(_) => "scoring",
        RecommendError::Log(_) => "event_log",
    }
}

/// Wire shape of every error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&ServiceError> for ErrorBody {
    fn from(e: &ServiceError) -> Self {
        ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}
