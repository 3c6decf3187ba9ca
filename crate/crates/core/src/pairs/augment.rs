//! Generated texts (reasoning, class descriptions, instruction variants) with a
//! persistent digest-keyed cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{field, PairingStrategyId, SourceRecord};
use crate::backend::BackendError;
use crate::dataset::{read_jsonl, DatasetError};
use crate::model::{MediaRef, TaskSpec};
use crate::seed::digest_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    ReasoningJustification,
    ClassVisualDescription,
    TaskInstruction,
}

/// A request for one generated text.
///
/// For `ClassVisualDescription` the question carries the class name. For
/// `TaskInstruction` the question carries the seed instruction and the answer
/// a variant tag, so several variants of one instruction get distinct digests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentationRequest {
    pub image: MediaRef,
    pub question: String,
    pub answer: String,
    pub kind: AugmentationKind,
}

impl AugmentationRequest {
    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            AugmentationKind::ReasoningJustification => {
                if self.question.trim().is_empty() || self.answer.trim().is_empty() {
                    return Err("question and answer must be non-empty".into());
                }
            }
            AugmentationKind::ClassVisualDescription | AugmentationKind::TaskInstruction => {
                if self.question.trim().is_empty() {
                    return Err("question must be non-empty".into());
                }
            }
        }
        Ok(())
    }

    /// Stable cache key.
    pub fn digest(&self) -> String {
        digest_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }

    /// Whether the request should carry its image to the backend.
    pub fn has_image(&self) -> bool {
        !self.image.uri.is_empty() && self.kind != AugmentationKind::TaskInstruction
    }

    /// Text prompt sent alongside the image.
    pub fn prompt_text(&self) -> String {
        match self.kind {
            AugmentationKind::ReasoningJustification => format!(
                "Question: {}\nAnswer: {}\nWrite a few sentences that justify this answer, citing the visual evidence in the image.",
                self.question, self.answer
            ),
            AugmentationKind::ClassVisualDescription => format!(
                "Describe in one paragraph the visual features that distinguish \"{}\" from similar classes.",
                self.question
            ),
            AugmentationKind::TaskInstruction => format!(
                "Rewrite the following task instruction in different words. Keep every rule and keep the required answer format.\n\n{}",
                self.question
            ),
        }
    }
}

/// Anything that can turn an augmentation request into text.
pub trait AugmentationBackend: Send + Sync {
    fn generate(&self, request: &AugmentationRequest) -> Result<String, BackendError>;
}

/// Returns the same text for every request and counts calls.
#[derive(Debug, Default)]
pub struct FixedAugmenter {
    text: String,
    calls: AtomicUsize,
}

impl FixedAugmenter {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AugmentationBackend for FixedAugmenter {
    fn generate(&self, _request: &AugmentationRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.text.clone())
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("request {index}: {reason}")]
    InvalidRequest { index: usize, reason: String },
    #[error("request {index}: {source}")]
    Backend { index: usize, source: BackendError },
    #[error("augmentation cache {path}: {source}")]
    Cache { path: PathBuf, source: io::Error },
    #[error(transparent)]
    CacheFile(#[from] DatasetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    digest: String,
    text: String,
}

/// Digest → generated text. When backed by a file, every new entry is
/// appended immediately so an interrupted run resumes where it stopped.
#[derive(Debug, Default)]
pub struct AugmentCache {
    path: Option<PathBuf>,
    entries: HashMap<String, String>,
}

impl AugmentCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, AugmentError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (_, line) in read_jsonl::<CacheLine>(path)? {
                entries.insert(line.digest, line.text);
            }
        }
        Ok(Self { path: Some(path.to_path_buf()), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, request: &AugmentationRequest) -> Option<&str> {
        self.entries.get(&request.digest()).map(String::as_str)
    }

    fn insert(&mut self, digest: String, text: String) -> Result<(), AugmentError> {
        if let Some(path) = &self.path {
            let cache_err = |source| AugmentError::Cache { path: path.clone(), source };
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(cache_err)?;
            }
            let mut f: File = OpenOptions::new().create(true).append(true).open(path).map_err(cache_err)?;
            let line =
                serde_json::to_string(&CacheLine { digest: digest.clone(), text: text.clone() }).expect("serializable");
            writeln!(f, "{line}").map_err(cache_err)?;
        }
        self.entries.insert(digest, text);
        Ok(())
    }
}

/// One generated text per request, in order. Cached requests never reach the backend.
pub fn augment(
    requests: &[AugmentationRequest],
    backend: &dyn AugmentationBackend,
    cache: &mut AugmentCache,
) -> Result<Vec<String>, AugmentError> {
    let mut out = Vec::with_capacity(requests.len());
    for (index, request) in requests.iter().enumerate() {
        request.validate().map_err(|reason| AugmentError::InvalidRequest { index, reason })?;
        let digest = request.digest();
        if let Some(text) = cache.entries.get(&digest) {
            out.push(text.clone());
            continue;
        }
        let text = backend.generate(request).map_err(|source| AugmentError::Backend { index, source })?;
        cache.insert(digest, text.clone())?;
        out.push(text);
    }
    Ok(out)
}

/// Requests needed to complete `records` for `strategy`: reasoning for
/// single-QA records of the similarity strategies, class descriptions for
/// class-description records. Returns `(record index, request)` pairs.
pub fn pending_requests(records: &[SourceRecord], strategy: PairingStrategyId) -> Vec<(usize, AugmentationRequest)> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let request = match strategy {
            PairingStrategyId::SimilarImageSwap | PairingStrategyId::SimilarTextSwap => {
                if r.field(field::REASONING).is_some() || r.qa_series.is_some() {
                    continue;
                }
                let (Some(q), Some(a)) = (r.field(field::QUESTION), r.field(field::ANSWER)) else {
                    continue;
                };
                AugmentationRequest {
                    image: r.image.clone(),
                    question: q.to_string(),
                    answer: a.to_string(),
                    kind: AugmentationKind::ReasoningJustification,
                }
            }
            PairingStrategyId::CrossClassDescription => {
                if r.field(field::CLASS_DESCRIPTION).is_some() {
                    continue;
                }
                let Some(class) = r.field(field::CLASS_NAME).or(r.image.category.as_deref()) else {
                    continue;
                };
                AugmentationRequest {
                    // Descriptions are per class, not per image.
                    image: MediaRef::new(""),
                    question: class.to_string(),
                    answer: String::new(),
                    kind: AugmentationKind::ClassVisualDescription,
                }
            }
            _ => continue,
        };
        out.push((i, request));
    }
    out
}

/// Fills missing reasoning and class descriptions in place.
pub fn augment_records(
    records: &mut [SourceRecord],
    strategy: PairingStrategyId,
    backend: &dyn AugmentationBackend,
    cache: &mut AugmentCache,
) -> Result<usize, AugmentError> {
    let pending = pending_requests(records, strategy);
    let requests: Vec<_> = pending.iter().map(|(_, r)| r.clone()).collect();
    let texts = augment(&requests, backend, cache)?;
    for ((i, request), text) in pending.iter().zip(texts) {
        let key = match request.kind {
            AugmentationKind::ClassVisualDescription => field::CLASS_DESCRIPTION,
            _ => field::REASONING,
        };
        records[*i].fields.insert(key.to_string(), text);
    }
    Ok(pending.len())
}

/// Adds up to `n` generated instruction variants to the task's training pool.
/// Variants equal to the eval instruction or already pooled are dropped.
pub fn extend_instruction_pool(
    task: &mut TaskSpec,
    n: usize,
    backend: &dyn AugmentationBackend,
    cache: &mut AugmentCache,
) -> Result<usize, AugmentError> {
    let seed = task.train_instruction_pool[0].clone();
    let requests: Vec<_> = (0..n)
        .map(|i| AugmentationRequest {
            image: MediaRef::new(""),
            question: seed.clone(),
            answer: format!("variant {i}"),
            kind: AugmentationKind::TaskInstruction,
        })
        .collect();
    let mut added = 0;
    for text in augment(&requests, backend, cache)? {
        let text = text.trim().to_string();
        if text.is_empty() || text == task.eval_instruction || task.train_instruction_pool.contains(&text) {
            continue;
        }
        task.train_instruction_pool.push(text);
        added += 1;
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::tasks::builtin_task;

    fn req(q: &str) -> AugmentationRequest {
        AugmentationRequest {
            image: MediaRef::new("img.jpg"),
            question: q.into(),
            answer: "ans".into(),
            kind: AugmentationKind::ReasoningJustification,
        }
    }

    #[test]
    fn empty_requests() {
        let backend = FixedAugmenter::new("X");
        let out = augment(&[], &backend, &mut AugmentCache::in_memory()).unwrap();
        assert!(out.is_empty());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn fixed_backend_answers_every_request() {
        let backend = FixedAugmenter::new("X");
        let out = augment(&[req("a"), req("b")], &backend, &mut AugmentCache::in_memory()).unwrap();
        assert_eq!(out, ["X", "X"]);
    }

    #[test]
    fn identical_requests_hit_backend_once() {
        let backend = FixedAugmenter::new("X");
        let out = augment(&[req("a"), req("a")], &backend, &mut AugmentCache::in_memory()).unwrap();
        assert_eq!(out, ["X", "X"]);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn file_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache/aug.jsonl");
        let backend = FixedAugmenter::new("X");
        augment(&[req("a")], &backend, &mut AugmentCache::open(&path).unwrap()).unwrap();
        let mut reopened = AugmentCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        augment(&[req("a")], &backend, &mut reopened).unwrap();
        assert_eq!(backend.calls(), 1);
    }

    struct FailSecond(AtomicUsize);
    impl AugmentationBackend for FailSecond {
        fn generate(&self, r: &AugmentationRequest) -> Result<String, BackendError> {
            if self.0.fetch_add(1, Ordering::SeqCst) == 1 {
                Err(BackendError::HttpError { status: 503, body: "busy".into() })
            } else {
                Ok(format!("ok {}", r.question))
            }
        }
    }

    #[test]
    fn failure_keeps_partial_cache() {
        let mut cache = AugmentCache::in_memory();
        let backend = FailSecond(AtomicUsize::new(0));
        let err = augment(&[req("a"), req("b")], &backend, &mut cache).unwrap_err();
        assert!(matches!(err, AugmentError::Backend { index: 1, .. }));
        assert_eq!(cache.get(&req("a")), Some("ok a"));
        let out = augment(&[req("a"), req("b")], &backend, &mut cache).unwrap();
        assert_eq!(out, ["ok a", "ok b"]);
    }

    #[test]
    fn invalid_reasoning_request() {
        let backend = FixedAugmenter::new("X");
        let err = augment(&[req("")], &backend, &mut AugmentCache::in_memory()).unwrap_err();
        assert!(matches!(err, AugmentError::InvalidRequest { index: 0, .. }));
    }

    #[test]
    fn fills_reasoning_and_descriptions() {
        let mut recs = vec![
            SourceRecord::new("1", MediaRef::new("a.jpg"))
                .with_field(field::QUESTION, "q")
                .with_field(field::ANSWER, "a"),
            SourceRecord::new("2", MediaRef::new("b.jpg"))
                .with_field(field::QUESTION, "q")
                .with_field(field::ANSWER, "a")
                .with_field(field::REASONING, "given"),
        ];
        let backend = FixedAugmenter::new("because");
        let n =
            augment_records(&mut recs, PairingStrategyId::SimilarImageSwap, &backend, &mut AugmentCache::in_memory())
                .unwrap();
        assert_eq!(n, 1);
        assert_eq!(recs[0].field(field::REASONING), Some("because"));
        assert_eq!(recs[1].field(field::REASONING), Some("given"));

        let mut cars = vec![SourceRecord::new("c", MediaRef::new("c.jpg")).with_field(field::CLASS_NAME, "Dodge")];
        augment_records(&mut cars, PairingStrategyId::CrossClassDescription, &backend, &mut AugmentCache::in_memory())
            .unwrap();
        assert_eq!(cars[0].field(field::CLASS_DESCRIPTION), Some("because"));
    }

    #[test]
    fn instruction_pool_never_absorbs_eval_instruction() {
        let mut task = builtin_task("llava").unwrap();
        let backend = FixedAugmenter::new(task.eval_instruction.clone());
        let added = extend_instruction_pool(&mut task, 2, &backend, &mut AugmentCache::in_memory()).unwrap();
        assert_eq!(added, 0);
        task.validate().unwrap();
        let backend = FixedAugmenter::new("fresh wording");
        assert_eq!(extend_instruction_pool(&mut task, 3, &backend, &mut AugmentCache::in_memory()).unwrap(), 1);
    }
}
