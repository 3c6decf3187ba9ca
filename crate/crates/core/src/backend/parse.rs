use serde::{Deserialize, Serialize};

use crate::model::Label;

/// A parsed model answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Label(Label),
    Failure(String),
}

impl Parsed {
    pub fn label(&self) -> Option<Label> {
        match self {
            Parsed::Label(l) => Some(*l),
            Parsed::Failure(_) => None,
        }
    }
}

/// Lowercased answer with surrounding whitespace and punctuation removed.
pub fn normalize_answer(raw: &str) -> String {
    raw.to_lowercase()
        .trim_matches(|c: char| {
            c.is_whitespace() || c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
        })
        .to_string()
}

fn alpha_tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| !c.is_alphabetic()).filter(|t| !t.is_empty())
}

fn word_label(word: &str) -> Option<Label> {
    match word {
        "yes" => Some(Label::Relevant),
        "no" => Some(Label::NotRelevant),
        _ => None,
    }
}

/// Maps a free-form answer to a label.
///
/// The first alphabetic token decides when it is `yes` or `no`. Otherwise the
/// first sentence is scanned and accepted only if it mentions exactly one of
/// the two words.
pub fn parse_label(raw: &str) -> Parsed {
    let norm = normalize_answer(raw);
    if norm.is_empty() {
        return Parsed::Failure("empty".into());
    }
    if let Some(label) = alpha_tokens(&norm).next().and_then(word_label) {
        return Parsed::Label(label);
    }
    let first_sentence = norm.split(|c| matches!(c, '.' | '!' | '?' | '\n')).next().unwrap_or("");
    let mut found: Option<Label> = None;
    for label in alpha_tokens(first_sentence).filter_map(word_label) {
        match found {
            Some(prev) if prev != label => return Parsed::Failure("ambiguous".into()),
            _ => found = Some(label),
        }
    }
    match found {
        Some(label) => Parsed::Label(label),
        None => Parsed::Failure("ambiguous".into()),
    }
}
