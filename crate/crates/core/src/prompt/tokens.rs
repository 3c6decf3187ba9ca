use std::collections::HashSet;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token limits for one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub limit: usize,
    pub fallback_limit: usize,
    pub image_cost: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { limit: 4096, fallback_limit: 5120, image_cost: 576 }
    }
}

/// Which limit a prompt fits under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BudgetUse {
    Normal,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BudgetError {
    #[error("invalid budget: need 0 < limit <= fallback_limit and image_cost > 0")]
    Invalid,
    #[error("prompt needs {token_count} tokens, above the fallback limit of {fallback_limit}")]
    BudgetExceeded { token_count: usize, fallback_limit: usize },
}

impl TokenBudget {
    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.limit == 0 || self.limit > self.fallback_limit || self.image_cost == 0 {
            return Err(BudgetError::Invalid);
        }
        Ok(())
    }

    pub fn classify(&self, token_count: usize) -> Result<BudgetUse, BudgetError> {
        if token_count <= self.limit {
            Ok(BudgetUse::Normal)
        } else if token_count <= self.fallback_limit {
            Ok(BudgetUse::Escalated)
        } else {
            Err(BudgetError::BudgetExceeded { token_count, fallback_limit: self.fallback_limit })
        }
    }
}

/// Counts text tokens. Must be a pure function of the text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

impl<F: Fn(&str) -> usize + Send + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Number of segments: maximal alphanumeric runs plus one per other
/// non-whitespace character.
pub fn word_punct_segments(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("inflation factor must be a finite value >= 1, got {0}")]
pub struct InflationError(pub f64);

/// Default counter: word/punctuation segments scaled by an inflation factor
/// and rounded up. The factor is held as an exact ratio so `10 × 1.3` is 13.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordPunctCounter {
    inflation: Ratio<u64>,
}

impl Default for WordPunctCounter {
    fn default() -> Self {
        Self { inflation: Ratio::new(13, 10) }
    }
}

impl WordPunctCounter {
    /// Factor is rounded to the nearest thousandth.
    pub fn new(factor: f64) -> Result<Self, InflationError> {
        if !factor.is_finite() || factor < 1.0 {
            return Err(InflationError(factor));
        }
        Ok(Self { inflation: Ratio::new((factor * 1000.0).round() as u64, 1000) })
    }

    pub fn inflation(&self) -> Ratio<u64> {
        self.inflation
    }
}

impl TokenCounter for WordPunctCounter {
    fn count(&self, text: &str) -> usize {
        let scaled = Ratio::from_integer(word_punct_segments(text) as u64) * self.inflation;
        scaled.ceil().to_integer() as usize
    }
}

/// Greedy longest-match counter over a vocabulary file (one token per line).
/// Characters no vocabulary entry covers cost one token each.
#[derive(Debug, Clone)]
pub struct VocabCounter {
    vocab: HashSet<String>,
    max_chars: usize,
}

impl VocabCounter {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocab: HashSet<String> = tokens.into_iter().map(Into::into).filter(|t| !t.is_empty()).collect();
        let max_chars = vocab.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Self { vocab, max_chars }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().map(str::trim_end).map(str::to_string)))
    }

    fn count_word(&self, word: &[char]) -> usize {
        let mut n = 0;
        let mut i = 0;
        while i < word.len() {
            let longest = (1..=self.max_chars.min(word.len() - i))
                .rev()
                .find(|&len| self.vocab.contains(&word[i..i + len].iter().collect::<String>()))
                .unwrap_or(1);
            i += longest;
            n += 1;
        }
        n
    }
}

impl TokenCounter for VocabCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().map(|w| self.count_word(&w.chars().collect::<Vec<_>>())).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments() {
        assert_eq!(word_punct_segments(""), 0);
        assert_eq!(word_punct_segments("   "), 0);
        assert_eq!(word_punct_segments("what color?"), 3);
        assert_eq!(word_punct_segments("Question: a Answer: b."), 7);
        assert_eq!(word_punct_segments("e-mail 3.5"), 6);
    }

    #[test]
    fn inflation_is_exact() {
        let c = WordPunctCounter::default();
        // ten single-letter words: 10 × 1.3 = 13 exactly, no float drift to 14
        assert_eq!(c.count("a b c d e f g h i j"), 13);
        assert_eq!(c.count("a b c"), 4);
        assert_eq!(c.count(""), 0);
        assert_eq!(WordPunctCounter::new(1.0).unwrap().count("a b c"), 3);
        assert!(WordPunctCounter::new(0.5).is_err());
    }

    #[test]
    fn classify_thresholds() {
        let b = TokenBudget::default();
        assert_eq!(b.classify(4096), Ok(BudgetUse::Normal));
        assert_eq!(b.classify(4097), Ok(BudgetUse::Escalated));
        assert_eq!(b.classify(5120), Ok(BudgetUse::Escalated));
        assert!(matches!(b.classify(5121), Err(BudgetError::BudgetExceeded { .. })));
        assert!(TokenBudget { limit: 10, fallback_limit: 5, image_cost: 1 }.validate().is_err());
    }

    #[test]
    fn vocab_greedy_longest_match() {
        let v = VocabCounter::from_tokens(["un", "related", "relate", "d"]);
        assert_eq!(v.count("unrelated"), 2);
        assert_eq!(v.count("unrelatedx"), 3);
        assert_eq!(v.count("zz"), 2);
    }
}
