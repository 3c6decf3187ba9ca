//! Few-shot conversation prompts: context selection, assembly, token budgets.

mod assemble;
mod select;
mod tokens;

pub use assemble::{
    assemble, count_tokens, prompt_cost, AssembleError, ContextTurn, ConversationPrompt, PromptRecord, QueryTurn, Role,
    Turn, TurnRecord,
};
pub use select::{alternating_labels, select_context, ContextSelectorConfig, SelectError, SelectionMode};
pub use tokens::{
    word_punct_segments, BudgetError, BudgetUse, InflationError, TokenBudget, TokenCounter, VocabCounter,
    WordPunctCounter,
};
