use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::similarity::{SimilarityKind, SimilarityScores};
use super::{field, format_qa_text, BuildError, PairingStrategyId, QaPair, SourceRecord};
use crate::model::{Label, MediaRef, Provenance, RelevancySample, Split, TaskSpec, TextBlock, TextFormat};
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::SimilarityTable;

/// How similarity strategies choose among same-category donors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SimilarityPolicy {
    /// Highest score wins; ties go to the lexicographically smallest key.
    #[default]
    Max,
    /// Seeded uniform draw among donors scoring at least `min`.
    Threshold { min: f64 },
}

/// Donor pool for class-description negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSampling {
    /// Image from another class of the same corpus.
    #[default]
    DifferentClass,
    /// Image from another record of the same class.
    SameClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NegativeOptions {
    #[serde(default)]
    pub similarity: SimilarityPolicy,
    #[serde(default)]
    pub class_sampling: ClassSampling,
}

/// Category of a record: the `category` field, else the image category.
pub fn record_category(r: &SourceRecord) -> Option<&str> {
    r.field(field::CATEGORY).or(r.image.category.as_deref()).filter(|c| !c.is_empty())
}

fn missing(r: &SourceRecord, what: &str) -> BuildError {
    BuildError::StrategyInputMissing { record_id: r.record_id.clone(), field: what.to_string() }
}

fn require<'a>(r: &'a SourceRecord, key: &str) -> Result<&'a str, BuildError> {
    r.field(key).ok_or_else(|| missing(r, key))
}

fn category_of(r: &SourceRecord) -> Result<&str, BuildError> {
    record_category(r).ok_or_else(|| missing(r, field::CATEGORY))
}

fn class_of(r: &SourceRecord) -> Result<&str, BuildError> {
    r.field(field::CLASS_NAME).or_else(|| record_category(r)).ok_or_else(|| missing(r, field::CLASS_NAME))
}

fn split_of(r: &SourceRecord) -> Result<Split, BuildError> {
    match r.field(field::SPLIT).map(str::to_ascii_lowercase).as_deref() {
        None | Some("train") => Ok(Split::Train),
        Some("test") => Ok(Split::Test),
        Some(other) => Err(BuildError::InvalidField {
            record_id: r.record_id.clone(),
            field: field::SPLIT.into(),
            value: other.into(),
        }),
    }
}

fn text_sim_key(r: &SourceRecord) -> &str {
    r.field(field::TEXT_EMBED_KEY).unwrap_or(&r.record_id)
}

fn qa_series(r: &SourceRecord) -> Result<Vec<QaPair>, BuildError> {
    if let Some(series) = &r.qa_series {
        return Ok(series.clone());
    }
    let q = require(r, field::QUESTION)?;
    let a = require(r, field::ANSWER)?;
    Ok(vec![QaPair::new(q, a)])
}

/// The record's own text for the given strategy.
fn positive_text(r: &SourceRecord, strategy: PairingStrategyId) -> Result<TextBlock, BuildError> {
    use PairingStrategyId::*;
    match strategy {
        SameCategoryImageSwap => {
            let series = r.qa_series.as_deref().ok_or_else(|| missing(r, "qa_series"))?;
            Ok(format_qa_text(series, None)?)
        }
        SiblingFieldMismatch => Ok(TextBlock::new(require(r, field::SECTION_TEXT)?, TextFormat::PlainParagraph)),
        ChoiceListNegatives => {
            let title = require(r, field::STEP_TITLE)?.trim();
            let text = require(r, field::STEP_TEXT)?.trim();
            Ok(TextBlock::new(format!("{title}: {text}"), TextFormat::IngredientsDescription))
        }
        SimilarImageSwap | SimilarTextSwap => Ok(format_qa_text(&qa_series(r)?, r.field(field::REASONING))?),
        CrossClassDescription => {
            Ok(TextBlock::new(require(r, field::CLASS_DESCRIPTION)?, TextFormat::CategoryDescription))
        }
    }
}

/// Recipes are kept only when their first step is titled "ingredients", ignoring case.
fn recipe_kept(r: &SourceRecord) -> Result<bool, BuildError> {
    Ok(require(r, field::STEP_TITLE)?.trim().eq_ignore_ascii_case("ingredients"))
}

fn choice_images(r: &SourceRecord) -> Result<&super::ChoiceImages, BuildError> {
    let choices = r.choice_images.as_ref().ok_or_else(|| missing(r, "choice_images"))?;
    if choices.negatives.is_empty() {
        return Err(BuildError::InvalidField {
            record_id: r.record_id.clone(),
            field: "choice_images.negatives".into(),
            value: "[]".into(),
        });
    }
    Ok(choices)
}

fn check_unique(records: &[SourceRecord]) -> Result<(), BuildError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.record_id.as_str()) {
            return Err(BuildError::DuplicateRecord(r.record_id.clone()));
        }
    }
    Ok(())
}

fn sample(
    task: &TaskSpec,
    r: &SourceRecord,
    suffix: &str,
    image: MediaRef,
    text: TextBlock,
    label: Label,
) -> Result<RelevancySample, BuildError> {
    Ok(RelevancySample {
        id: format!("{}/{}/{suffix}", task.name, r.record_id),
        task: task.name.clone(),
        image,
        text,
        label,
        split: split_of(r)?,
        provenance: Provenance {
            source_record_id: r.record_id.clone(),
            negative_rule: match label {
                Label::Relevant => None,
                Label::NotRelevant => Some(task.strategy.as_str().to_string()),
            },
        },
    })
}

/// One relevant pair per usable record, in record order.
pub fn build_positives(records: &[SourceRecord], task: &TaskSpec) -> Result<Vec<RelevancySample>, BuildError> {
    check_unique(records)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let image = if task.strategy == PairingStrategyId::ChoiceListNegatives {
            let choices = choice_images(r)?;
            if !recipe_kept(r)? {
                continue;
            }
            choices.positive.clone()
        } else {
            r.image.clone()
        };
        let text = positive_text(r, task.strategy)?;
        out.push(sample(task, r, "pos", image, text, Label::Relevant)?);
    }
    Ok(out)
}

/// Seeded uniform index in `0..n` for the donor draw of one record.
///
/// Donor lists are sorted by record id (or by similarity key for threshold
/// mode) before indexing, so the draw depends only on the seed, task and
/// record id.
pub fn donor_draw(seed: u64, task: &str, record_id: &str, n: usize) -> usize {
    assert!(n > 0, "donor_draw over an empty donor set");
    rng_for(seed, &[task, record_id, "donor"]).gen_range(0..n)
}

pub fn build_negatives(
    records: &[SourceRecord],
    task: &TaskSpec,
    sim: Option<&SimilarityTable>,
    seed: u64,
) -> Result<Vec<RelevancySample>, BuildError> {
    build_negatives_with(records, task, sim, seed, &NegativeOptions::default())
}

/// Not-relevant pairs for every record, in record order, labelled with the strategy name.
pub fn build_negatives_with<S: Scalar>(
    records: &[SourceRecord],
    task: &TaskSpec,
    sim: Option<&SimilarityScores<S>>,
    seed: u64,
    opts: &NegativeOptions,
) -> Result<Vec<RelevancySample>, BuildError> {
    use PairingStrategyId::*;
    check_unique(records)?;
    let strategy = task.strategy;
    let sim = if strategy.needs_similarity() {
        let expected = if strategy == SimilarImageSwap { SimilarityKind::Image } else { SimilarityKind::Text };
        let table = sim.ok_or(BuildError::MissingSimilarityTable(strategy))?;
        if table.kind() != expected {
            return Err(BuildError::SimilarityKindMismatch { strategy, expected });
        }
        Some(table)
    } else {
        None
    };

    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let neg = |image: MediaRef, text: TextBlock| sample(task, r, "neg", image, text, Label::NotRelevant);
        match strategy {
            SameCategoryImageSwap => {
                let category = category_of(r)?;
                let mut donors: Vec<&SourceRecord> = records
                    .iter()
                    .filter(|d| {
                        d.record_id != r.record_id && record_category(d) == Some(category) && d.image.uri != r.image.uri
                    })
                    .collect();
                donors.sort_by(|a, b| a.record_id.cmp(&b.record_id));
                if donors.is_empty() {
                    return Err(BuildError::NoEligibleDonor(r.record_id.clone()));
                }
                let donor = donors[donor_draw(seed, &task.name, &r.record_id, donors.len())];
                out.push(neg(donor.image.clone(), positive_text(r, strategy)?)?);
            }
            SiblingFieldMismatch => {
                let own = positive_text(r, strategy)?;
                let text = TextBlock::new(require(r, field::PAGE_DESCRIPTION)?, TextFormat::PlainParagraph);
                if text.text_key == own.text_key {
                    return Err(BuildError::NoEligibleDonor(r.record_id.clone()));
                }
                out.push(neg(r.image.clone(), text)?);
            }
            ChoiceListNegatives => {
                let choices = choice_images(r)?;
                if !recipe_kept(r)? {
                    continue;
                }
                let text = positive_text(r, strategy)?;
                for (i, image) in choices.negatives.iter().enumerate() {
                    if image.uri == choices.positive.uri {
                        return Err(BuildError::NoEligibleDonor(r.record_id.clone()));
                    }
                    out.push(sample(task, r, &format!("neg{i}"), image.clone(), text.clone(), Label::NotRelevant)?);
                }
            }
            SimilarImageSwap => {
                let table = sim.expect("checked above");
                let category = category_of(r)?;
                let key = r.image.embed_key.as_deref().ok_or_else(|| missing(r, "image.embed_key"))?;
                let candidates: Vec<(&str, S, &SourceRecord)> = records
                    .iter()
                    .filter(|d| {
                        d.record_id != r.record_id && record_category(d) == Some(category) && d.image.uri != r.image.uri
                    })
                    .filter_map(|d| {
                        let dk = d.image.embed_key.as_deref()?;
                        Some((dk, table.score(key, dk)?, d))
                    })
                    .collect();
                let donor = choose_by_similarity(candidates, opts.similarity, seed, task, r)?;
                out.push(neg(donor.image.clone(), positive_text(r, strategy)?)?);
            }
            SimilarTextSwap => {
                let table = sim.expect("checked above");
                let category = category_of(r)?;
                let own = positive_text(r, strategy)?;
                let key = text_sim_key(r);
                let mut candidates = Vec::new();
                for d in records {
                    if d.record_id == r.record_id || record_category(d) != Some(category) {
                        continue;
                    }
                    let dk = text_sim_key(d);
                    let Some(score) = table.score(key, dk) else { continue };
                    if positive_text(d, strategy)?.text_key == own.text_key {
                        continue;
                    }
                    candidates.push((dk, score, d));
                }
                let donor = choose_by_similarity(candidates, opts.similarity, seed, task, r)?;
                out.push(neg(r.image.clone(), positive_text(donor, strategy)?)?);
            }
            CrossClassDescription => {
                let class = class_of(r)?;
                let text = positive_text(r, strategy)?;
                let mut donors = Vec::new();
                for d in records {
                    if d.record_id == r.record_id || d.image.uri == r.image.uri {
                        continue;
                    }
                    let same = class_of(d)? == class;
                    let eligible = match opts.class_sampling {
                        ClassSampling::DifferentClass => !same,
                        ClassSampling::SameClass => same,
                    };
                    if eligible {
                        donors.push(d);
                    }
                }
                donors.sort_by(|a, b| a.record_id.cmp(&b.record_id));
                if donors.is_empty() {
                    return Err(BuildError::NoEligibleDonor(r.record_id.clone()));
                }
                let donor = donors[donor_draw(seed, &task.name, &r.record_id, donors.len())];
                out.push(neg(donor.image.clone(), text)?);
            }
        }
    }
    Ok(out)
}

fn choose_by_similarity<'a, S: Scalar>(
    mut candidates: Vec<(&'a str, S, &'a SourceRecord)>,
    policy: SimilarityPolicy,
    seed: u64,
    task: &TaskSpec,
    r: &SourceRecord,
) -> Result<&'a SourceRecord, BuildError> {
    candidates.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.2.record_id.cmp(&b.2.record_id)));
    let chosen = match policy {
        SimilarityPolicy::Max => {
            // Sorted ascending by key, so strict `>` keeps the smallest key on ties.
            let mut best: Option<(S, &SourceRecord)> = None;
            for (_, score, d) in &candidates {
                if best.map_or(true, |(b, _)| *score > b) {
                    best = Some((*score, d));
                }
            }
            best.map(|(_, d)| d)
        }
        SimilarityPolicy::Threshold { min } => {
            let min = S::from_f64(min).unwrap_or_else(S::one);
            let eligible: Vec<_> = candidates.iter().filter(|c| c.1 >= min).collect();
            if eligible.is_empty() {
                None
            } else {
                Some(eligible[donor_draw(seed, &task.name, &r.record_id, eligible.len())].2)
            }
        }
    };
    chosen.ok_or_else(|| BuildError::NoEligibleDonor(r.record_id.clone()))
}

/// Selects samples to reassign to a hold-out test task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutFilter {
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub category: Option<String>,
}

impl HoldoutFilter {
    pub fn matches(&self, s: &RelevancySample) -> bool {
        self.task.as_ref().map_or(true, |t| *t == s.task)
            && self.category.as_ref().map_or(true, |c| s.image.category.as_ref() == Some(c))
    }
}

/// Moves matching samples to the test split of `<task>_ho`. Nothing is dropped.
pub fn split_holdout(samples: Vec<RelevancySample>, filter: &HoldoutFilter) -> Vec<RelevancySample> {
    samples
        .into_iter()
        .map(|mut s| {
            if filter.matches(&s) {
                s.split = Split::Test;
                s.task = format!("{}_ho", s.task);
            }
            s
        })
        .collect()
}
