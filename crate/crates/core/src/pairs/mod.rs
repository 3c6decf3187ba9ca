//! Dataset construction: from source corpora to positive and negative pairs.
//!
//! The pipeline runs collect, extract/format, augment, pair and convert. This
//! module owns the middle three: [`format_qa_text`] templates, [`augment`] for
//! generated reasoning or descriptions, and [`build_positives`] /
//! [`build_negatives`] for pairing.

pub mod adapters;
pub mod augment;
mod build;
mod format;
pub mod similarity;
pub mod tasks;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MediaRef;

pub use augment::{
    augment, augment_records, extend_instruction_pool, pending_requests, AugmentCache, AugmentError,
    AugmentationBackend, AugmentationKind, AugmentationRequest, FixedAugmenter,
};
pub use build::{
    build_negatives, build_negatives_with, build_positives, donor_draw, record_category, split_holdout, ClassSampling,
    HoldoutFilter, NegativeOptions, SimilarityPolicy,
};
pub use format::{format_qa_text, FormatError};

/// Field names that adapters populate in [`SourceRecord::fields`].
pub mod field {
    pub const CATEGORY: &str = "category";
    pub const SPLIT: &str = "split";
    pub const QUESTION: &str = "question";
    pub const ANSWER: &str = "answer";
    pub const REASONING: &str = "reasoning";
    pub const PAGE_TITLE: &str = "page_title";
    pub const PAGE_DESCRIPTION: &str = "page_description";
    pub const SECTION_TEXT: &str = "section_text";
    pub const STEP_TITLE: &str = "step_title";
    pub const STEP_TEXT: &str = "step_text";
    pub const CLASS_NAME: &str = "class_name";
    pub const CLASS_DESCRIPTION: &str = "class_description";
    /// Key of the record's text in a text similarity table; defaults to the record id.
    pub const TEXT_EMBED_KEY: &str = "text_embed_key";
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { question: question.into(), answer: answer.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceImages {
    pub positive: MediaRef,
    pub negatives: Vec<MediaRef>,
}

/// One raw record of a source corpus, after adapter conversion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecord {
    pub record_id: String,
    pub image: MediaRef,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_series: Option<Vec<QaPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_images: Option<ChoiceImages>,
}

impl SourceRecord {
    pub fn new(record_id: impl Into<String>, image: MediaRef) -> Self {
        Self { record_id: record_id.into(), image, fields: BTreeMap::new(), qa_series: None, choice_images: None }
    }

    pub fn with_field(mut self, key: &str, value: impl Into<String>) -> Self {
        self.fields.insert(key.to_string(), value.into());
        self
    }

    pub fn with_qa(mut self, series: Vec<QaPair>) -> Self {
        self.qa_series = Some(series);
        self
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }
}

/// How negatives are produced for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategyId {
    SameCategoryImageSwap,
    SiblingFieldMismatch,
    ChoiceListNegatives,
    SimilarImageSwap,
    SimilarTextSwap,
    CrossClassDescription,
}

impl PairingStrategyId {
    pub const ALL: [PairingStrategyId; 6] = [
        PairingStrategyId::SameCategoryImageSwap,
        PairingStrategyId::SiblingFieldMismatch,
        PairingStrategyId::ChoiceListNegatives,
        PairingStrategyId::SimilarImageSwap,
        PairingStrategyId::SimilarTextSwap,
        PairingStrategyId::CrossClassDescription,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SameCategoryImageSwap => "same_category_image_swap",
            Self::SiblingFieldMismatch => "sibling_field_mismatch",
            Self::ChoiceListNegatives => "choice_list_negatives",
            Self::SimilarImageSwap => "similar_image_swap",
            Self::SimilarTextSwap => "similar_text_swap",
            Self::CrossClassDescription => "cross_class_description",
        }
    }

    /// Strategy used by a built-in task name.
    pub fn for_task(task: &str) -> Option<Self> {
        Some(match task {
            "llava" => Self::SameCategoryImageSwap,
            "wiki" => Self::SiblingFieldMismatch,
            "recipe" => Self::ChoiceListNegatives,
            "textvqa" | "chartqa" => Self::SimilarImageSwap,
            "tdiuc" | "infographics" => Self::SimilarTextSwap,
            t if tasks::FINE_GRAINED_TASKS.contains(&t) || t == "fine-grained" => Self::CrossClassDescription,
            _ => return None,
        })
    }

    pub fn needs_similarity(self) -> bool {
        matches!(self, Self::SimilarImageSwap | Self::SimilarTextSwap)
    }

    /// Strategies whose negatives replace the image (the others replace the text).
    pub fn swaps_image(self) -> bool {
        matches!(
            self,
            Self::SameCategoryImageSwap
                | Self::ChoiceListNegatives
                | Self::SimilarImageSwap
                | Self::CrossClassDescription
        )
    }
}

impl fmt::Display for PairingStrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("record {record_id}: missing {field}")]
    StrategyInputMissing { record_id: String, field: String },
    #[error("record {record_id}: field {field} has invalid value {value:?}")]
    InvalidField { record_id: String, field: String, value: String },
    #[error("record {0}: no eligible donor for a negative pair")]
    NoEligibleDonor(String),
    #[error("strategy {0} requires a similarity table")]
    MissingSimilarityTable(PairingStrategyId),
    #[error("strategy {strategy} requires a {expected:?} similarity table")]
    SimilarityKindMismatch { strategy: PairingStrategyId, expected: similarity::SimilarityKind },
    #[error("duplicate record id {0}")]
    DuplicateRecord(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}
