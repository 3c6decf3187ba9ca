//! Line-delimited JSON dataset files.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_sample, RelevancySample, Split, ValidationError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: line {line_no}: {detail}")]
    MalformedLine { path: PathBuf, line_no: usize, detail: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("line {line_no}: {source}")]
    InvalidLine { line_no: usize, source: ValidationError },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Reads one JSON value per non-blank line. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
            path: path.to_path_buf(),
            line_no: idx + 1,
            detail: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Writes one compact JSON value per line, creating parent directories.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("serializable value");
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads and validates a dataset, preserving file order.
pub fn load_dataset(path: &Path) -> Result<Vec<RelevancySample>, DatasetError> {
    let rows: Vec<(usize, RelevancySample)> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line_no, sample) in rows {
        validate_sample(&sample).map_err(|source| DatasetError::InvalidLine { line_no, source })?;
        if !seen.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId(sample.id));
        }
        out.push(sample);
    }
    Ok(out)
}

/// Validates every sample and id uniqueness, then writes. Nothing is written on error.
pub fn validate_dataset(samples: &[RelevancySample]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        validate_sample(s)?;
        if !seen.insert(s.id.as_str()) {
            return Err(DatasetError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

/// `(task, source_record_id)` pairs that have samples in both the train and
/// the test split of the same task.
pub fn split_overlap(samples: &[RelevancySample]) -> Vec<(String, String)> {
    let key = |s: &RelevancySample| (s.task.clone(), s.provenance.source_record_id.clone());
    let train: BTreeSet<_> = samples.iter().filter(|s| s.split == Split::Train).map(key).collect();
    let test: BTreeSet<_> = samples.iter().filter(|s| s.split == Split::Test).map(key).collect();
    train.intersection(&test).cloned().collect()
}

pub fn save_dataset(samples: &[RelevancySample], path: &Path) -> Result<(), DatasetError> {
    validate_dataset(samples)?;
    write_jsonl(path, samples)
}
