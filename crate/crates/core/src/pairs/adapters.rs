//! Converters from public dataset record layouts to [`SourceRecord`].
//!
//! Every adapter reads one JSON object per line. The optional keys `split`,
//! `category`, `embed_key`, `text_embed_key` and `reasoning` pass through
//! unchanged wherever they appear.
//!
//! | adapter          | required keys                                                   |
//! |------------------|-----------------------------------------------------------------|
//! | `manifest`       | a serialized `SourceRecord`                                     |
//! | `llava_instruct` | `id`, `image`, `category`, `conversations[{from, value}]`       |
//! | `wit`            | `id`, `image_url`, `section_text`, `page_description`           |
//! | `recipeqa`       | `recipe_id`, `steps[{title, body}]`, `choices[uri]`, `answer`   |
//! | `textvqa`        | `question_id`, `image`, `question`, `answers[]` or `answer`     |
//! | `chartqa`        | `id`, `imgname`, `query`, `label`                               |
//! | `tdiuc`          | `question_id`, `image`, `question`, `answer`, `question_type`   |
//! | `infographicvqa` | `id`, `image`, `qa[{question, answer}]`                         |
//! | `fine_grained`   | `id`, `image`, `class_name`, optional `description`             |

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use super::{field, ChoiceImages, QaPair, SourceRecord};
use crate::dataset::{read_jsonl, DatasetError};
use crate::model::MediaRef;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("unknown adapter {0:?}")]
    UnknownAdapter(String),
    #[error("line {line_no}: {reason}")]
    Record { line_no: usize, reason: String },
    #[error(transparent)]
    Io(#[from] DatasetError),
}

pub trait SourceAdapter: Send + Sync {
    fn name(&self) -> &'static str;
    fn convert(&self, raw: &Value) -> Result<SourceRecord, String>;
}

pub const ADAPTERS: [&str; 9] =
    ["manifest", "llava_instruct", "wit", "recipeqa", "textvqa", "chartqa", "tdiuc", "infographicvqa", "fine_grained"];

pub fn adapter_for(name: &str) -> Result<Box<dyn SourceAdapter>, AdapterError> {
    Ok(match name {
        "manifest" => Box::new(Manifest),
        "llava_instruct" => Box::new(LlavaInstruct),
        "wit" => Box::new(Wit),
        "recipeqa" => Box::new(RecipeQa),
        "textvqa" => Box::new(TextVqa),
        "chartqa" => Box::new(ChartQa),
        "tdiuc" => Box::new(Tdiuc),
        "infographicvqa" => Box::new(InfographicVqa),
        "fine_grained" => Box::new(FineGrained),
        other => return Err(AdapterError::UnknownAdapter(other.to_string())),
    })
}

/// Reads a corpus file through an adapter.
pub fn load_corpus(path: &Path, adapter: &dyn SourceAdapter) -> Result<Vec<SourceRecord>, AdapterError> {
    read_jsonl::<Value>(path)?
        .into_iter()
        .map(|(line_no, raw)| adapter.convert(&raw).map_err(|reason| AdapterError::Record { line_no, reason }))
        .collect()
}

fn get_str<'a>(raw: &'a Value, key: &str) -> Result<&'a str, String> {
    match raw.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s),
        Some(Value::Number(_)) => Err(format!("{key} must be a string")),
        _ => Err(format!("missing {key}")),
    }
}

/// String or number rendered as a string.
fn get_id(raw: &Value, key: &str) -> Result<String, String> {
    match raw.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(format!("missing {key}")),
    }
}

fn opt_str<'a>(raw: &'a Value, key: &str) -> Option<&'a str> {
    raw.get(key).and_then(Value::as_str).filter(|s| !s.is_empty())
}

fn media(raw: &Value, uri: &str) -> MediaRef {
    MediaRef {
        uri: uri.to_string(),
        category: opt_str(raw, "category").map(str::to_string),
        embed_key: opt_str(raw, "embed_key").map(str::to_string),
    }
}

fn passthrough(raw: &Value, mut r: SourceRecord) -> SourceRecord {
    for key in [field::SPLIT, field::CATEGORY, field::TEXT_EMBED_KEY, field::REASONING] {
        if let Some(v) = opt_str(raw, key) {
            r.fields.insert(key.to_string(), v.to_string());
        }
    }
    r
}

struct Manifest;

impl SourceAdapter for Manifest {
    fn name(&self) -> &'static str {
        "manifest"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        serde_json::from_value(raw.clone()).map_err(|e| e.to_string())
    }
}

struct LlavaInstruct;

impl SourceAdapter for LlavaInstruct {
    fn name(&self) -> &'static str {
        "llava_instruct"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let id = get_id(raw, "id")?;
        let turns = raw.get("conversations").and_then(Value::as_array).ok_or("missing conversations")?;
        let mut series = Vec::new();
        let mut question: Option<String> = None;
        for turn in turns {
            let from = get_str(turn, "from")?;
            let value = get_str(turn, "value")?.replace("<image>", "");
            match (from, question.take()) {
                ("human", _) => question = Some(value.trim().to_string()),
                ("gpt", Some(q)) => series.push(QaPair::new(q, value.trim())),
                ("gpt", None) => return Err("gpt turn without a preceding human turn".into()),
                (other, _) => return Err(format!("unknown speaker {other:?}")),
            }
        }
        if series.is_empty() {
            return Err("no question/answer turns".into());
        }
        let record = SourceRecord::new(id, media(raw, get_str(raw, "image")?)).with_qa(series);
        Ok(passthrough(raw, record))
    }
}

struct Wit;

impl SourceAdapter for Wit {
    fn name(&self) -> &'static str {
        "wit"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let mut r = SourceRecord::new(get_id(raw, "id")?, media(raw, get_str(raw, "image_url")?))
            .with_field(field::SECTION_TEXT, get_str(raw, "section_text")?)
            .with_field(field::PAGE_DESCRIPTION, get_str(raw, "page_description")?);
        if let Some(title) = opt_str(raw, "page_title") {
            r = r.with_field(field::PAGE_TITLE, title);
        }
        Ok(passthrough(raw, r))
    }
}

struct RecipeQa;

impl SourceAdapter for RecipeQa {
    fn name(&self) -> &'static str {
        "recipeqa"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let id = get_id(raw, "recipe_id")?;
        let steps = raw.get("steps").and_then(Value::as_array).ok_or("missing steps")?;
        let first = steps.first().ok_or("recipe has no steps")?;
        let choices: Vec<&str> = raw
            .get("choices")
            .and_then(Value::as_array)
            .ok_or("missing choices")?
            .iter()
            .map(|c| c.as_str().ok_or("choices must be strings"))
            .collect::<Result<_, _>>()?;
        let answer = raw.get("answer").and_then(Value::as_u64).ok_or("missing answer index")? as usize;
        if answer >= choices.len() {
            return Err(format!("answer index {answer} out of range"));
        }
        let positive = media(raw, choices[answer]);
        let negatives =
            choices.iter().enumerate().filter(|(i, _)| *i != answer).map(|(_, uri)| MediaRef::new(*uri)).collect();
        let mut r = SourceRecord::new(id, positive.clone())
            .with_field(field::STEP_TITLE, get_str(first, "title")?)
            .with_field(field::STEP_TEXT, get_str(first, "body")?);
        r.choice_images = Some(ChoiceImages { positive, negatives });
        Ok(passthrough(raw, r))
    }
}

/// Most frequent answer; earliest wins ties.
fn majority_answer(answers: &[Value]) -> Option<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, a) in answers.iter().filter_map(Value::as_str).enumerate() {
        counts.entry(a).or_insert((0, i)).0 += 1;
    }
    counts.into_iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).map(|(a, _)| a.to_string())
}

struct TextVqa;

impl SourceAdapter for TextVqa {
    fn name(&self) -> &'static str {
        "textvqa"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let answer = match raw.get("answers").and_then(Value::as_array) {
            Some(list) => majority_answer(list).ok_or("answers list is empty")?,
            None => get_str(raw, "answer")?.to_string(),
        };
        let r = SourceRecord::new(get_id(raw, "question_id")?, media(raw, get_str(raw, "image")?))
            .with_field(field::QUESTION, get_str(raw, "question")?)
            .with_field(field::ANSWER, answer);
        Ok(passthrough(raw, r))
    }
}

struct ChartQa;

impl SourceAdapter for ChartQa {
    fn name(&self) -> &'static str {
        "chartqa"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let r = SourceRecord::new(get_id(raw, "id")?, media(raw, get_str(raw, "imgname")?))
            .with_field(field::QUESTION, get_str(raw, "query")?)
            .with_field(field::ANSWER, get_id(raw, "label")?);
        Ok(passthrough(raw, r))
    }
}

struct Tdiuc;

impl SourceAdapter for Tdiuc {
    fn name(&self) -> &'static str {
        "tdiuc"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let r = SourceRecord::new(get_id(raw, "question_id")?, media(raw, get_str(raw, "image")?))
            .with_field(field::QUESTION, get_str(raw, "question")?)
            .with_field(field::ANSWER, get_str(raw, "answer")?);
        // Question type is the grouping used for text donors.
        let r = passthrough(raw, r).with_field(field::CATEGORY, get_str(raw, "question_type")?);
        Ok(r)
    }
}

struct InfographicVqa;

impl SourceAdapter for InfographicVqa {
    fn name(&self) -> &'static str {
        "infographicvqa"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let series = raw
            .get("qa")
            .and_then(Value::as_array)
            .ok_or("missing qa")?
            .iter()
            .map(|qa| Ok(QaPair::new(get_str(qa, "question")?, get_id(qa, "answer")?)))
            .collect::<Result<Vec<_>, String>>()?;
        if series.is_empty() {
            return Err("qa list is empty".into());
        }
        let r = SourceRecord::new(get_id(raw, "id")?, media(raw, get_str(raw, "image")?)).with_qa(series);
        Ok(passthrough(raw, r))
    }
}

struct FineGrained;

impl SourceAdapter for FineGrained {
    fn name(&self) -> &'static str {
        "fine_grained"
    }

    fn convert(&self, raw: &Value) -> Result<SourceRecord, String> {
        let class = get_str(raw, "class_name")?;
        let mut image = media(raw, get_str(raw, "image")?);
        image.category.get_or_insert_with(|| class.to_string());
        let mut r = SourceRecord::new(get_id(raw, "id")?, image).with_field(field::CLASS_NAME, class);
        if let Some(d) = opt_str(raw, "description") {
            r = r.with_field(field::CLASS_DESCRIPTION, d);
        }
        Ok(passthrough(raw, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn convert(name: &str, raw: Value) -> Result<SourceRecord, String> {
        adapter_for(name).unwrap().convert(&raw)
    }

    #[test]
    fn llava_conversations() {
        let r = convert(
            "llava_instruct",
            json!({"id": "000001", "image": "coco/1.jpg", "category": "dog", "conversations": [
                {"from": "human", "value": "<image>\nWhat is it?"},
                {"from": "gpt", "value": "A dog."},
                {"from": "human", "value": "Color?"},
                {"from": "gpt", "value": "Brown."}
            ]}),
        )
        .unwrap();
        assert_eq!(r.image.category.as_deref(), Some("dog"));
        let qa = r.qa_series.unwrap();
        assert_eq!(qa[0], QaPair::new("What is it?", "A dog."));
        assert_eq!(qa.len(), 2);
    }

    #[test]
    fn recipe_choices_split_into_positive_and_negatives() {
        let r = convert(
            "recipeqa",
            json!({"recipe_id": "r1", "steps": [{"title": "Ingredients", "body": "eggs"}],
                   "choices": ["a.jpg", "b.jpg", "c.jpg", "d.jpg"], "answer": 2}),
        )
        .unwrap();
        let c = r.choice_images.unwrap();
        assert_eq!(c.positive.uri, "c.jpg");
        assert_eq!(c.negatives.len(), 3);
        assert_eq!(r.fields[field::STEP_TITLE], "Ingredients");
    }

    #[test]
    fn textvqa_majority_answer() {
        let r = convert(
            "textvqa",
            json!({"question_id": 7, "image": "t.jpg", "question": "what?",
                   "answers": ["b", "a", "a", "b", "c"], "category": "sign", "embed_key": "t"}),
        )
        .unwrap();
        assert_eq!(r.record_id, "7");
        assert_eq!(r.fields[field::ANSWER], "b");
        assert_eq!(r.image.embed_key.as_deref(), Some("t"));
    }

    #[test]
    fn tdiuc_question_type_is_category() {
        let r = convert(
            "tdiuc",
            json!({"question_id": "q", "image": "i.jpg", "question": "what?", "answer": "run",
                   "question_type": "activity_recognition"}),
        )
        .unwrap();
        assert_eq!(r.fields[field::CATEGORY], "activity_recognition");
    }

    #[test]
    fn missing_fields_are_reported() {
        assert_eq!(convert("wit", json!({"id": "w"})).unwrap_err(), "missing image_url");
        assert!(adapter_for("coco").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let rec = SourceRecord::new("a", MediaRef::new("a.jpg")).with_field(field::SECTION_TEXT, "x");
        let back = convert("manifest", serde_json::to_value(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
