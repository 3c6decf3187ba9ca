use thiserror::Error;

use super::QaPair;
use crate::model::{TextBlock, TextFormat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("question/answer series is empty")]
    EmptySeries,
}

/// Renders a QA series as `Question: {Q} Answer: {A}` segments separated by a
/// blank line, with optional reasoning appended to the last answer after `. `.
pub fn format_qa_text(series: &[QaPair], reasoning: Option<&str>) -> Result<TextBlock, FormatError> {
    if series.is_empty() {
        return Err(FormatError::EmptySeries);
    }
    let mut body = series
        .iter()
        .map(|qa| format!("Question: {} Answer: {}", qa.question.trim(), qa.answer.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let reasoning = reasoning.map(str::trim).filter(|r| !r.is_empty());
    let format = match reasoning {
        Some(r) => {
            body.push_str(". ");
            body.push_str(r);
            TextFormat::QaWithReasoning
        }
        None => TextFormat::Conversations,
    };
    Ok(TextBlock::new(body, format))
}
