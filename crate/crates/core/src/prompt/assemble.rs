use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tokens::{BudgetError, BudgetUse, TokenBudget, TokenCounter};
use crate::model::{Label, MediaRef, RelevancySample, TextBlock};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextTurn {
    pub image: MediaRef,
    pub text: TextBlock,
    pub answer: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTurn {
    pub image: MediaRef,
    pub text: TextBlock,
}

/// Instruction, demonstrations, then the query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationPrompt {
    pub instruction: String,
    pub context_turns: Vec<ContextTurn>,
    pub query: QueryTurn,
    pub token_count: usize,
    pub budget_used: BudgetUse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Human,
    Assistant,
}

/// One turn in conversation order; borrowed from the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn<'a> {
    pub role: Role,
    pub image: Option<&'a MediaRef>,
    pub text: &'a str,
}

/// Serialized prompt for audit logs and replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instruction: String,
    pub turns: Vec<TurnRecord>,
    pub token_count: usize,
    pub budget_used: BudgetUse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_uri: Option<String>,
    pub text: String,
}

impl ConversationPrompt {
    /// Every turn, starting with the instruction as a human turn.
    pub fn turns(&self) -> Vec<Turn<'_>> {
        let mut turns = Vec::with_capacity(2 + 2 * self.context_turns.len());
        turns.push(Turn { role: Role::Human, image: None, text: &self.instruction });
        for c in &self.context_turns {
            turns.push(Turn { role: Role::Human, image: Some(&c.image), text: &c.text.body });
            turns.push(Turn { role: Role::Assistant, image: None, text: c.answer.answer_word() });
        }
        turns.push(Turn { role: Role::Human, image: Some(&self.query.image), text: &self.query.text.body });
        turns
    }

    pub fn image_count(&self) -> usize {
        self.context_turns.len() + 1
    }

    pub fn record(&self) -> PromptRecord {
        PromptRecord {
            instruction: self.instruction.clone(),
            turns: self
                .turns()
                .into_iter()
                .skip(1)
                .map(|t| TurnRecord {
                    role: t.role,
                    image_uri: t.image.map(|m| m.uri.clone()),
                    text: t.text.to_string(),
                })
                .collect(),
            token_count: self.token_count,
            budget_used: self.budget_used,
        }
    }
}

/// Text tokens of every segment plus `image_cost` per image.
pub fn prompt_cost<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    images: usize,
    tokenizer: &dyn TokenCounter,
    image_cost: usize,
) -> usize {
    texts.into_iter().map(|t| tokenizer.count(t)).sum::<usize>() + images * image_cost
}

/// Token count of a prompt: every turn's text (instruction and answers
/// included) plus `image_cost` per image.
pub fn count_tokens(prompt: &ConversationPrompt, tokenizer: &dyn TokenCounter, image_cost: usize) -> usize {
    let turns = prompt.turns();
    let images = turns.iter().filter(|t| t.image.is_some()).count();
    prompt_cost(turns.iter().map(|t| t.text), images, tokenizer, image_cost)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("query sample {0} appears among its own contexts")]
    QueryInContext(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

/// Builds the conversation and classifies it against the budget.
pub fn assemble(
    instruction: &str,
    contexts: &[RelevancySample],
    query: &RelevancySample,
    budget: &TokenBudget,
    tokenizer: &dyn TokenCounter,
) -> Result<ConversationPrompt, AssembleError> {
    if instruction.trim().is_empty() {
        return Err(AssembleError::EmptyInstruction);
    }
    if contexts.iter().any(|c| c.id == query.id) {
        return Err(AssembleError::QueryInContext(query.id.clone()));
    }
    let mut prompt = ConversationPrompt {
        instruction: instruction.to_string(),
        context_turns: contexts
            .iter()
            .map(|c| ContextTurn { image: c.image.clone(), text: c.text.clone(), answer: c.label })
            .collect(),
        query: QueryTurn { image: query.image.clone(), text: query.text.clone() },
        token_count: 0,
        budget_used: BudgetUse::Normal,
    };
    prompt.token_count = count_tokens(&prompt, tokenizer, budget.image_cost);
    prompt.budget_used = budget.classify(prompt.token_count)?;
    Ok(prompt)
}
