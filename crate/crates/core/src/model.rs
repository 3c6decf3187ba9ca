//! Canonical domain types shared by every stage.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairs::PairingStrategyId;
use crate::seed::digest_hex;

/// Binary relevancy judgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Relevant,
    NotRelevant,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::Relevant => Label::NotRelevant,
            Label::NotRelevant => Label::Relevant,
        }
    }

    /// The word an assistant turn uses for this label.
    pub fn answer_word(self) -> &'static str {
        match self {
            Label::Relevant => "Yes",
            Label::NotRelevant => "No",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Relevant => "relevant",
            Label::NotRelevant => "not_relevant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaRef {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_key: Option<String>,
}

impl MediaRef {
    pub fn new(uri: impl Into<String>) -> Self {
        Self { uri: uri.into(), category: None, embed_key: None }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn with_embed_key(mut self, key: impl Into<String>) -> Self {
        self.embed_key = Some(key.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextFormat {
    Conversations,
    PlainParagraph,
    IngredientsDescription,
    QaWithReasoning,
    CategoryDescription,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextBlock {
    pub body: String,
    pub format: TextFormat,
    /// Identity of the text, used to find contexts that share the query's text.
    pub text_key: String,
}

impl TextBlock {
    /// Builds a block whose `text_key` is the digest of `body`.
    pub fn new(body: impl Into<String>, format: TextFormat) -> Self {
        let body = body.into();
        let text_key = text_digest(&body);
        Self { body, format, text_key }
    }

    pub fn with_text_key(mut self, key: impl Into<String>) -> Self {
        self.text_key = key.into();
        self
    }
}

/// Default `text_key`: first 16 hex digits of the SHA-256 of the body.
pub fn text_digest(body: &str) -> String {
    let mut hex = digest_hex(body.as_bytes());
    hex.truncate(16);
    hex
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source_record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_rule: Option<String>,
}

/// One labelled (image, text) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevancySample {
    pub id: String,
    pub task: String,
    pub image: MediaRef,
    pub text: TextBlock,
    pub label: Label,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sample {sample_id:?}: {reason}")]
pub struct ValidationError {
    pub sample_id: String,
    pub reason: String,
}

impl ValidationError {
    fn new(sample_id: &str, reason: impl Into<String>) -> Self {
        Self { sample_id: sample_id.to_string(), reason: reason.into() }
    }
}

/// Checks every per-sample invariant.
pub fn validate_sample(s: &RelevancySample) -> Result<(), ValidationError> {
    let fail = |reason: &str| Err(ValidationError::new(&s.id, reason));
    if s.id.is_empty() {
        return fail("id empty");
    }
    if s.task.is_empty() {
        return fail("task empty");
    }
    if s.image.uri.is_empty() {
        return fail("image.uri empty");
    }
    if s.text.body.is_empty() {
        return fail("text.body empty");
    }
    if s.text.text_key.is_empty() {
        return fail("text.text_key empty");
    }
    if s.provenance.source_record_id.is_empty() {
        return fail("provenance.source_record_id empty");
    }
    match (s.label, &s.provenance.negative_rule) {
        (Label::NotRelevant, None) => fail("provenance.negative_rule missing"),
        (Label::Relevant, Some(_)) => fail("provenance.negative_rule set on relevant sample"),
        _ => Ok(()),
    }
}

/// A relevancy task: how its pairs are built and how the model is instructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub strategy: PairingStrategyId,
    /// Fixed instruction used at inference; never part of the training pool.
    pub eval_instruction: String,
    pub train_instruction_pool: Vec<String>,
    pub text_format: TextFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskSpecError {
    #[error("task name empty")]
    EmptyName,
    #[error("task {0}: eval_instruction empty")]
    EmptyEvalInstruction(String),
    #[error("task {0}: train_instruction_pool empty")]
    EmptyPool(String),
    #[error("task {0}: eval_instruction also appears in train_instruction_pool")]
    EvalInstructionInPool(String),
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskSpecError> {
        if self.name.is_empty() {
            return Err(TaskSpecError::EmptyName);
        }
        if self.eval_instruction.trim().is_empty() {
            return Err(TaskSpecError::EmptyEvalInstruction(self.name.clone()));
        }
        if self.train_instruction_pool.is_empty() {
            return Err(TaskSpecError::EmptyPool(self.name.clone()));
        }
        if self.train_instruction_pool.contains(&self.eval_instruction) {
            return Err(TaskSpecError::EvalInstructionInPool(self.name.clone()));
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::sample;
    use super::*;

    #[test]
    fn valid_sample_passes() {
        assert_eq!(validate_sample(&sample("a", Label::Relevant)), Ok(()));
        assert_eq!(validate_sample(&sample("b", Label::NotRelevant)), Ok(()));
    }

    #[test]
    fn empty_body_is_rejected() {
        let mut s = sample("a", Label::Relevant);
        s.text.body.clear();
        assert_eq!(validate_sample(&s).unwrap_err().reason, "text.body empty");
    }

    #[test]
    fn negative_without_rule_is_rejected() {
        let mut s = sample("a", Label::NotRelevant);
        s.provenance.negative_rule = None;
        assert_eq!(validate_sample(&s).unwrap_err().reason, "provenance.negative_rule missing");
        let mut s = sample("a", Label::Relevant);
        s.provenance.negative_rule = Some("x".into());
        assert!(validate_sample(&s).is_err());
    }

    #[test]
    fn label_wire_names() {
        assert_eq!(serde_json::to_string(&Label::Relevant).unwrap(), "\"relevant\"");
        assert_eq!(serde_json::to_string(&Label::NotRelevant).unwrap(), "\"not_relevant\"");
    }

    #[test]
    fn text_key_defaults_to_digest() {
        let a = TextBlock::new("same", TextFormat::PlainParagraph);
        let b = TextBlock::new("same", TextFormat::Conversations);
        assert_eq!(a.text_key, b.text_key);
        assert_eq!(a.text_key.len(), 16);
        assert_ne!(a.text_key, TextBlock::new("other", TextFormat::PlainParagraph).text_key);
    }

    #[test]
    fn eval_instruction_must_be_unseen() {
        let mut spec = TaskSpec {
            name: "t".into(),
            strategy: PairingStrategyId::SameCategoryImageSwap,
            eval_instruction: "judge".into(),
            train_instruction_pool: vec!["other".into()],
            text_format: TextFormat::Conversations,
        };
        assert!(spec.validate().is_ok());
        spec.train_instruction_pool.push("judge".into());
        assert_eq!(spec.validate(), Err(TaskSpecError::EvalInstructionInPool("t".into())));
    }
}
