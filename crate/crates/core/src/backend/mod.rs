//! Model backends: an HTTP chat-completions client, deterministic mocks, and
//! the answer parser that turns raw replies into labels.

mod audit;
mod client;
mod config;
mod mock;
mod parse;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditEntry, AuditLog};
pub use client::{send_chat, HttpBackend};
pub use config::{BackendConfig, ConfigError, Secret, TOKEN_ENV_VAR};
pub use mock::MockBackend;
pub use parse::{normalize_answer, parse_label, Parsed};

use crate::model::Label;
use crate::prompt::{BudgetUse, ConversationPrompt};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: Box<BackendError> },
    #[error("cannot load image {uri}: {reason}")]
    ImageLoadError { uri: String, reason: String },
    #[error("no answer recorded for sample {0}")]
    UnknownSample(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::HttpError { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that answers a relevancy prompt with raw text.
pub trait RelevancyBackend: Send + Sync {
    fn answer(&self, sample_id: &str, prompt: &ConversationPrompt) -> Result<String, BackendError>;
    fn model_name(&self) -> String;
}

impl<B: RelevancyBackend + ?Sized> RelevancyBackend for &B {
    fn answer(&self, sample_id: &str, prompt: &ConversationPrompt) -> Result<String, BackendError> {
        (**self).answer(sample_id, prompt)
    }
    fn model_name(&self) -> String {
        (**self).model_name()
    }
}

impl<B: RelevancyBackend + ?Sized> RelevancyBackend for Box<B> {
    fn answer(&self, sample_id: &str, prompt: &ConversationPrompt) -> Result<String, BackendError> {
        (**self).answer(sample_id, prompt)
    }
    fn model_name(&self) -> String {
        (**self).model_name()
    }
}

/// How a prompt related to the token budget. `Exceeded` prompts are never sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStatus {
    Normal,
    Escalated,
    Exceeded,
}

impl From<BudgetUse> for BudgetStatus {
    fn from(u: BudgetUse) -> Self {
        match u {
            BudgetUse::Normal => BudgetStatus::Normal,
            BudgetUse::Escalated => BudgetStatus::Escalated,
        }
    }
}

/// One model judgment on one sample at one shot count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub sample_id: String,
    pub task: String,
    pub shots: usize,
    pub truth: Label,
    pub raw_text: String,
    pub parsed: Parsed,
    pub latency_ms: u64,
    pub budget_used: BudgetStatus,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.parsed.label() == Some(self.truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transient_classification() {
        assert!(BackendError::Timeout.is_transient());
        assert!(BackendError::Transport("refused".into()).is_transient());
        for status in [429, 500, 502, 503] {
            assert!(BackendError::HttpError { status, body: String::new() }.is_transient());
        }
        for status in [400, 401, 404] {
            assert!(!BackendError::HttpError { status, body: String::new() }.is_transient());
        }
        assert!(!BackendError::InvalidResponse("x".into()).is_transient());
    }

    #[test]
    fn prediction_roundtrip() {
        let p = Prediction {
            sample_id: "s".into(),
            task: "wiki".into(),
            shots: 2,
            truth: Label::Relevant,
            raw_text: "Maybe".into(),
            parsed: Parsed::Failure("ambiguous".into()),
            latency_ms: 3,
            budget_used: BudgetStatus::Escalated,
        };
        let line = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Prediction>(&line).unwrap(), p);
        assert!(!p.is_correct());
    }
}
