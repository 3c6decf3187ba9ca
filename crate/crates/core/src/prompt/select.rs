use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, RelevancySample};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    BalancedRandom,
    /// Only contexts whose text is the query's text.
    SemanticRelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSelectorConfig {
    pub mode: SelectionMode,
    pub shots: usize,
    pub seed: u64,
    #[serde(default = "default_first_label")]
    pub first_label: Label,
}

fn default_first_label() -> Label {
    Label::Relevant
}

impl ContextSelectorConfig {
    pub fn new(mode: SelectionMode, shots: usize, seed: u64) -> Self {
        Self { mode, shots, seed, first_label: Label::Relevant }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("context pool has {available} {label} samples, {needed} needed")]
    InsufficientPool { label: Label, needed: usize, available: usize },
}

/// Labels of the context turns, alternating from `first`.
pub fn alternating_labels(first: Label, shots: usize) -> Vec<Label> {
    (0..shots).map(|i| if i % 2 == 0 { first } else { first.flipped() }).collect()
}

/// Picks `cfg.shots` demonstrations with alternating labels.
///
/// Each label's candidates are drawn uniformly without replacement. The
/// query itself is never a candidate. Candidates are ordered by id before the
/// seeded draw, so the pool's order does not affect the result.
pub fn select_context(
    pool: &[RelevancySample],
    query: &RelevancySample,
    cfg: &ContextSelectorConfig,
) -> Result<Vec<RelevancySample>, SelectError> {
    if cfg.shots == 0 {
        return Ok(Vec::new());
    }
    let labels = alternating_labels(cfg.first_label, cfg.shots);
    let mut picks_by_label = Vec::with_capacity(2);
    for label in [cfg.first_label, cfg.first_label.flipped()] {
        let needed = labels.iter().filter(|l| **l == label).count();
        let mut candidates: Vec<&RelevancySample> = pool
            .iter()
            .filter(|s| s.label == label && s.id != query.id)
            .filter(|s| match cfg.mode {
                SelectionMode::BalancedRandom => true,
                SelectionMode::SemanticRelated => s.text.text_key == query.text.text_key,
            })
            .collect();
        if candidates.len() < needed {
            return Err(SelectError::InsufficientPool { label, needed, available: candidates.len() });
        }
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = rng_for(cfg.seed, &["context", label.as_str()]);
        let (picked, _) = candidates.partial_shuffle(&mut rng, needed);
        picks_by_label.push((label, picked.to_vec().into_iter()));
    }
    Ok(labels
        .iter()
        .map(|label| {
            let (_, it) = picks_by_label.iter_mut().find(|(l, _)| l == label).expect("both labels present");
            it.next().expect("enough picks").clone()
        })
        .collect())
}
