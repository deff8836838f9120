use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use coach_core::recommend::Policy;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub corpus_path: PathBuf,
    pub questions_path: PathBuf,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub event_log_path: PathBuf,
    pub policy: Policy,
    /// Accepted bearer tokens. Empty disables authentication, which is only
    /// permitted on a loopback address.
    pub auth_tokens: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::in_dir(Path::new("coach-data"))
    }
}

/// Environment variables that override config fields.
pub const ENV_OVERRIDES: [&str; 8] = [
    "COACH_LISTEN",
    "COACH_CORPUS",
    "COACH_QUESTIONS",
    "COACH_MODEL",
    "COACH_REPORT",
    "COACH_EVENT_LOG",
    "COACH_AUTH_TOKENS",
    "COACH_PER_AGENT_CAP",
];

impl ServiceConfig {
    /// Default file layout under a data directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            corpus_path: dir.join("corpus.jsonl"),
            questions_path: dir.join("questions.json"),
            model_path: dir.join("models").join("current.model"),
            report_path: dir.join("reports").join("latest.json"),
            event_log_path: dir.join("events.jsonl"),
            policy: Policy::default(),
            auth_tokens: Vec::new(),
        }
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, ServiceError> {
        serde_json::from_slice(bytes).map_err(|e| ServiceError::Validation(format!("service config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(path).map_err(|e| ServiceError::io(path, e))?;
        Self::from_json_slice(&bytes)
    }

    pub fn apply_env<F>(&mut self, get: F) -> Result<(), ServiceError>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(v) = get("COACH_LISTEN") {
            self.listen = v;
        }
        for (key, slot) in [
            ("COACH_CORPUS", &mut self.corpus_path),
            ("COACH_QUESTIONS", &mut self.questions_path),
            ("COACH_MODEL", &mut self.model_path),
            ("COACH_REPORT", &mut self.report_path),
            ("COACH_EVENT_LOG", &mut self.event_log_path),
        ] {
            if let Some(v) = get(key) {
                *slot = PathBuf::from(v);
            }
        }
        if let Some(v) = get("COACH_AUTH_TOKENS") {
            self.auth_tokens = v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
        }
        if let Some(v) = get("COACH_PER_AGENT_CAP") {
            self.policy.per_agent_cap = v
                .parse()
                .map_err(|_| ServiceError::Validation(format!("COACH_PER_AGENT_CAP={v:?} is not a number")))?;
        }
        Ok(())
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ServiceError> {
        self.listen
            .parse()
            .map_err(|_| ServiceError::Validation(format!("listen address {:?} is not host:port", self.listen)))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let addr = self.listen_addr()?;
        if !addr.ip().is_loopback() && self.auth_tokens.is_empty() {
            return Err(ServiceError::Validation(format!(
                "serving on {addr} requires at least one auth token"
            )));
        }
        if self.auth_tokens.iter().any(|t| t.trim().is_empty()) {
            return Err(ServiceError::Validation("auth tokens must not be blank".into()));
        }
        self.policy.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        for p in [&self.corpus_path, &self.questions_path, &self.model_path] {
            if !p.exists() {
                return Err(ServiceError::Validation(format!("{} does not exist", p.display())));
            }
        }
        for p in [&self.event_log_path, &self.report_path] {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
            }
        }
        Ok(())
    }
}
