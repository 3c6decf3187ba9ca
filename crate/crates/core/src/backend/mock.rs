use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BackendError, RelevancyBackend};
use crate::model::Label;
use crate::prompt::ConversationPrompt;

/// Deterministic in-process backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MockBackend {
    /// Always answers the given string.
    FixedAnswer(String),
    /// Answers `Yes`/`No` from a sample id → label table.
    LookupTable(HashMap<String, Label>),
    /// `Yes` iff the query text contains the query image's category, ignoring case.
    RuleBased,
}

impl MockBackend {
    pub fn rule_answer(prompt: &ConversationPrompt) -> Label {
        let hit =
            prompt.query.image.category.as_deref().is_some_and(|cat| {
                !cat.is_empty() && prompt.query.text.body.to_lowercase().contains(&cat.to_lowercase())
            });
        if hit {
            Label::Relevant
        } else {
            Label::NotRelevant
        }
    }
}

impl RelevancyBackend for MockBackend {
    fn answer(&self, sample_id: &str, prompt: &ConversationPrompt) -> Result<String, BackendError> {
        match self {
            MockBackend::FixedAnswer(s) => Ok(s.clone()),
            MockBackend::LookupTable(table) => table
                .get(sample_id)
                .map(|l| l.answer_word().to_string())
                .ok_or_else(|| BackendError::UnknownSample(sample_id.to_string())),
            MockBackend::RuleBased => Ok(Self::rule_answer(prompt).answer_word().to_string()),
        }
    }

    fn model_name(&self) -> String {
        match self {
            MockBackend::FixedAnswer(_) => "mock-fixed".into(),
            MockBackend::LookupTable(_) => "mock-lookup".into(),
            MockBackend::RuleBased => "mock-rule-based".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::sample;
    use crate::prompt::{assemble, TokenBudget, WordPunctCounter};

    fn prompt_for(category: &str, body: &str) -> ConversationPrompt {
        let mut q = sample("q", Label::Relevant);
        q.image.category = Some(category.into());
        q.text.body = body.into();
        assemble("S", &[], &q, &TokenBudget::default(), &WordPunctCounter::default()).unwrap()
    }

    #[test]
    fn fixed() {
        let p = prompt_for("dog", "x");
        assert_eq!(MockBackend::FixedAnswer("Yes".into()).answer("a", &p).unwrap(), "Yes");
    }

    #[test]
    fn rule_based() {
        assert_eq!(MockBackend::RuleBased.answer("a", &prompt_for("dog", "A brown Dog runs")).unwrap(), "Yes");
        assert_eq!(MockBackend::RuleBased.answer("a", &prompt_for("dog", "a cat")).unwrap(), "No");
    }

    #[test]
    fn lookup_miss() {
        let table = HashMap::from([("a".to_string(), Label::NotRelevant)]);
        let m = MockBackend::LookupTable(table);
        let p = prompt_for("dog", "x");
        assert_eq!(m.answer("a", &p).unwrap(), "No");
        assert!(matches!(m.answer("b", &p), Err(BackendError::UnknownSample(id)) if id == "b"));
    }
}
