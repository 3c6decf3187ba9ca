//! Config-driven commands behind the `relevancy` binary.
//!
//! Every command writes only inside the configured output directory:
//!
//! ```text
//! <output_dir>/
//!   datasets/<task>.jsonl        built samples, hold-out samples included
//!   build_manifest.json          counts, seed, strategies and config digest
//!   cache/augment.jsonl          generated text, reused across builds
//!   runs/<model>-<digest>/       one directory per distinct eval setup
//!     journal.jsonl              append-only predictions, used to resume
//!     predictions.jsonl          sorted predictions of the finished run
//!     report.{md,csv,json}
//! ```

mod config;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    interpolate_env, BackendSection, ConfigError, CustomTask, EvalSection, MockMode, ProjectConfig, SourceConfig,
    TaskEntry,
};

use crate::backend::Prediction;
use crate::dataset::{load_dataset, read_jsonl, split_overlap, validate_dataset, write_jsonl, DatasetError};
use crate::eval::{
    compare_runs, render_deltas, render_report, render_table, run_eval_with, EvalDeps, EvalError, EvalReport,
    PredictionStore, ReportError, ReportFormat, ReportMetadata, RunConfig,
};
use crate::model::{Label, RelevancySample, Split};
use crate::pairs::adapters::{adapter_for, load_corpus, AdapterError};
use crate::pairs::similarity::SimilarityError;
use crate::pairs::tasks::base_task_name;
use crate::pairs::{
    augment_records, build_negatives_with, build_positives, split_holdout, AugmentCache, AugmentError, BuildError,
    PairingStrategyId,
};
use crate::prompt::{SelectionMode, WordPunctCounter};
use crate::seed::digest_hex;
use crate::SimilarityTable;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown task {0:?}: not in the config")]
    UnknownTask(String),
    #[error("task {task}: {source}")]
    Adapter { task: String, source: AdapterError },
    #[error("task {task}: {source}")]
    Augment { task: String, source: AugmentError },
    #[error("task {task}: similarity table: {source}")]
    Similarity { task: String, source: SimilarityError },
    #[error("task {task}: {source}")]
    Build { task: String, source: BuildError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset for task {task} not found at {path}; run build first")]
    MissingDataset { task: String, path: PathBuf },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("malformed predictions file {path}: {reason}")]
    MalformedPredictions { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 1 for configuration problems, 3 for backend failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownTask(_) => 1,
            PipelineError::Eval(EvalError::Backend { .. } | EvalError::CellFailed { .. }) => 3,
            PipelineError::Augment { source: AugmentError::Backend { .. }, .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn dataset_path(cfg: &ProjectConfig, task: &str) -> PathBuf {
    cfg.output_dir.join("datasets").join(format!("{task}.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBuildSummary {
    pub task: String,
    pub strategy: PairingStrategyId,
    pub records: usize,
    pub positives: usize,
    pub negatives: usize,
    pub train: usize,
    pub test: usize,
    pub holdout: usize,
    pub augmented: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub seed: u64,
    pub config_digest: String,
    pub tasks: Vec<TaskBuildSummary>,
}

fn selected_tasks(cfg: &ProjectConfig, filter: &[String]) -> Result<Vec<crate::model::TaskSpec>, PipelineError> {
    let specs = cfg.task_specs()?;
    if filter.is_empty() {
        return Ok(specs);
    }
    for name in filter {
        if !specs.iter().any(|s| s.name == *name) {
            return Err(PipelineError::UnknownTask(name.clone()));
        }
    }
    Ok(specs.into_iter().filter(|s| filter.contains(&s.name)).collect())
}

/// Builds the datasets of the selected tasks (all when `filter` is empty).
///
/// Nothing is written unless every task builds.
pub fn cmd_build(cfg: &ProjectConfig, filter: &[String]) -> Result<BuildManifest, PipelineError> {
    let specs = selected_tasks(cfg, filter)?;
    let mut cache: Option<AugmentCache> = None;
    let mut built = Vec::with_capacity(specs.len());
    for spec in &specs {
        let task = spec.name.clone();
        let source = cfg.sources.get(&task).ok_or_else(|| ConfigError::MissingSource(task.clone()))?;
        let adapter =
            adapter_for(&source.adapter).map_err(|source| PipelineError::Adapter { task: task.clone(), source })?;
        let mut records = load_corpus(&source.path, adapter.as_ref())
            .map_err(|source| PipelineError::Adapter { task: task.clone(), source })?;
        tracing::info!(task, records = records.len(), "collected");

        let pending = crate::pairs::pending_requests(&records, spec.strategy);
        let mut augmented = 0;
        if !pending.is_empty() {
            let section = cfg.augmentation_backend.as_ref().ok_or_else(|| PipelineError::Augment {
                task: task.clone(),
                source: AugmentError::InvalidRequest {
                    index: pending[0].0,
                    reason: "records need generated text but no augmentation_backend is configured".into(),
                },
            })?;
            if cache.is_none() {
                let path = cfg.output_dir.join("cache").join("augment.jsonl");
                cache = Some(
                    AugmentCache::open(&path)
                        .map_err(|source| PipelineError::Augment { task: task.clone(), source })?,
                );
            }
            let audit = cfg.output_dir.join("cache").join("augment_audit.jsonl");
            let backend = section.augmentation_backend(Some(&audit))?;
            augmented =
                augment_records(&mut records, spec.strategy, backend.as_ref(), cache.as_mut().expect("opened above"))
                    .map_err(|source| PipelineError::Augment { task: task.clone(), source })?;
        }

        let table = match cfg.similarity_tables.get(&task) {
            Some(path) if spec.strategy.needs_similarity() => Some(
                SimilarityTable::load(path)
                    .map_err(|source| PipelineError::Similarity { task: task.clone(), source })?,
            ),
            _ => None,
        };
        let build_err = |source| PipelineError::Build { task: task.clone(), source };
        let positives = build_positives(&records, spec).map_err(build_err)?;
        let negatives =
            build_negatives_with(&records, spec, table.as_ref(), cfg.seed, &cfg.negatives).map_err(build_err)?;
        let (n_pos, n_neg) = (positives.len(), negatives.len());
        let mut samples: Vec<RelevancySample> = positives.into_iter().chain(negatives).collect();
        for filter in cfg.holdouts.iter().filter(|h| h.task.as_deref().map_or(true, |t| t == task)) {
            samples = split_holdout(samples, filter);
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        validate_dataset(&samples)?;
        let summary = TaskBuildSummary {
            task: task.clone(),
            strategy: spec.strategy,
            records: records.len(),
            positives: n_pos,
            negatives: n_neg,
            train: samples.iter().filter(|s| s.split == Split::Train).count(),
            test: samples.iter().filter(|s| s.split == Split::Test).count(),
            holdout: samples.iter().filter(|s| s.task != task).count(),
            augmented,
            file: format!("datasets/{task}.jsonl"),
            sha256: String::new(),
        };
        tracing::info!(task, positives = n_pos, negatives = n_neg, "paired");
        built.push((summary, samples));
    }

    let mut manifest =
        BuildManifest { seed: cfg.seed, config_digest: cfg.digest(), tasks: Vec::with_capacity(built.len()) };
    for (mut summary, samples) in built {
        let path = dataset_path(cfg, &summary.task);
        write_jsonl(&path, &samples)?;
        summary.sha256 = digest_hex(&std::fs::read(&path).map_err(io_err(&path))?);
        manifest.tasks.push(summary);
    }
    let manifest_path = cfg.output_dir.join("build_manifest.json");
    write_file(&manifest_path, &(serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n"))?;
    Ok(manifest)
}

/// Overrides applied on top of the config's eval section.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub tasks: Option<Vec<String>>,
    pub shots: Option<Vec<usize>>,
    pub mode: Option<SelectionMode>,
    /// Recorded in report metadata, in seconds since the epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub markdown: String,
    pub run_dir: PathBuf,
    pub predictions: Vec<Prediction>,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    run: &'a RunConfig,
    model: String,
    backend: &'a BackendSection,
}

/// Evaluates built datasets and writes predictions and reports.
///
/// An interrupted run with the same settings resumes from its journal.
pub fn cmd_eval(cfg: &ProjectConfig, opts: &EvalOptions) -> Result<EvalOutcome, PipelineError> {
    let specs = cfg.task_specs()?;
    let tasks = opts.tasks.clone().or_else(|| cfg.eval.tasks.clone()).unwrap_or_else(|| {
        let mut names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
        let holdout_tasks: Vec<String> =
            cfg.holdouts.iter().filter_map(|h| h.task.as_ref().map(|t| format!("{t}_ho"))).collect();
        for t in holdout_tasks {
            if !names.contains(&t) {
                names.push(t);
            }
        }
        names
    });
    for t in &tasks {
        if !specs.iter().any(|s| s.name == base_task_name(t)) {
            return Err(PipelineError::UnknownTask(t.clone()));
        }
    }

    let mut dataset = Vec::new();
    let mut loaded = HashSet::new();
    for t in &tasks {
        let base = base_task_name(t).to_string();
        if loaded.insert(base.clone()) {
            let path = dataset_path(cfg, &base);
            if !path.exists() {
                return Err(PipelineError::MissingDataset { task: base, path });
            }
            dataset.extend(load_dataset(&path)?);
        }
    }
    for (task, record) in split_overlap(&dataset) {
        tracing::warn!(task, record, "source record has samples in both train and test");
    }

    let mut run = RunConfig::new(tasks.clone(), opts.shots.clone().unwrap_or_else(|| cfg.eval.shots.clone()), cfg.seed);
    run.mode = opts.mode.unwrap_or(cfg.eval.mode);
    run.budget = cfg.budget;
    run.max_parallel_requests = cfg.backend.max_parallel_requests();
    for spec in &specs {
        run.instructions.insert(spec.name.clone(), spec.eval_instruction.clone());
    }

    let model = cfg.backend.model_name();
    let identity = RunIdentity { run: &run, model: model.clone(), backend: &cfg.backend };
    let config_digest = digest_hex(&serde_json::to_vec(&identity).expect("serializable run"));
    let run_dir = cfg.output_dir.join("runs").join(format!("{}-{}", slug(&model), &config_digest[..12]));
    std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;

    let backend = cfg.backend.relevancy_backend(Some(&run_dir.join("audit.jsonl")))?;
    let store = PredictionStore::open(&run_dir.join("journal.jsonl"))?;
    let tokenizer = WordPunctCounter::default();
    tracing::info!(model, tasks = ?run.tasks, shots = ?run.shots, resumed = store.len(), "evaluating");
    let predictions = run_eval_with(
        &dataset,
        &run,
        &EvalDeps { backend: backend.as_ref(), tokenizer: &tokenizer, store: Some(&store) },
    )?;

    write_jsonl(&run_dir.join("predictions.jsonl"), &predictions)?;
    let (temperature, max_tokens) = match &cfg.backend {
        BackendSection::Http(b) => (b.temperature, b.max_tokens),
        BackendSection::Mock { .. } => (0.0, 0),
    };
    let report = EvalReport::from_predictions(
        &predictions,
        ReportMetadata {
            model,
            seed: cfg.seed,
            timestamp: opts.timestamp,
            config_digest,
            tasks,
            temperature,
            max_tokens,
        },
    );
    for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        write_file(&run_dir.join(format!("report.{}", format.extension())), &render_report(&report, format))?;
    }
    Ok(EvalOutcome { markdown: render_report(&report, ReportFormat::Markdown), report, run_dir, predictions })
}

/// Reads a predictions file; empty or unparsable files are rejected.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    let malformed = |reason: String| PipelineError::MalformedPredictions { path: path.to_path_buf(), reason };
    let rows = read_jsonl::<Prediction>(path).map_err(|e| malformed(e.to_string()))?;
    if rows.is_empty() {
        return Err(malformed("no predictions".into()));
    }
    let mut seen = HashSet::new();
    for (line_no, p) in &rows {
        if !seen.insert((p.task.as_str(), p.shots, p.sample_id.as_str())) {
            return Err(malformed(format!("line {line_no}: duplicate prediction for {}", p.sample_id)));
        }
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

fn report_for(path: &Path) -> Result<EvalReport, PipelineError> {
    let predictions = load_predictions(path)?;
    let sibling = path.with_file_name("report.json");
    let metadata = std::fs::read_to_string(&sibling)
        .ok()
        .and_then(|text| serde_json::from_str::<EvalReport>(&text).ok())
        .map(|r| r.metadata)
        .unwrap_or_else(|| {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            let label = if stem == "predictions" {
                path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()).unwrap_or(stem)
            } else {
                stem
            };
            ReportMetadata {
                model: label.to_string(),
                seed: 0,
                timestamp: 0,
                config_digest: String::new(),
                tasks: Vec::new(),
                temperature: 0.0,
                max_tokens: 0,
            }
        });
    Ok(EvalReport::from_predictions(&predictions, metadata))
}

/// Renders stored predictions without contacting any backend.
///
/// One file gives the accuracy table in `format`. Two files also give a
/// Markdown delta table (second minus first).
pub fn cmd_report(paths: &[PathBuf], format: ReportFormat) -> Result<String, PipelineError> {
    let reports = paths.iter().map(|p| report_for(p)).collect::<Result<Vec<_>, _>>()?;
    let mut out = match format {
        ReportFormat::Markdown => render_table(&reports),
        ReportFormat::Csv => crate::eval::render_csv(&reports),
        ReportFormat::Json => serde_json::to_string_pretty(&reports).expect("serializable reports") + "\n",
    };
    if let [a, b] = reports.as_slice() {
        let deltas = compare_runs(a, b)?;
        out.push('\n');
        out.push_str(&render_deltas(a, b, &deltas));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub path: PathBuf,
    pub samples: usize,
    /// `(task, split, label)` → count.
    pub counts: BTreeMap<String, usize>,
    /// Source records with samples in both splits of one task.
    pub overlapping_records: usize,
}

/// Checks dataset files and counts samples per task, split and label.
pub fn cmd_validate(paths: &[PathBuf]) -> Result<Vec<DatasetSummary>, PipelineError> {
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let samples = load_dataset(path)?;
        let mut counts = BTreeMap::new();
        for s in &samples {
            let split = match s.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let label = match s.label {
                Label::Relevant => "relevant",
                Label::NotRelevant => "not_relevant",
            };
            *counts.entry(format!("{}/{split}/{label}", s.task)).or_insert(0) += 1;
        }
        out.push(DatasetSummary {
            path: path.clone(),
            samples: samples.len(),
            counts,
            overlapping_records: split_overlap(&samples).len(),
        });
    }
    Ok(out)
}

/// Dataset files of every configured task that has been built.
pub fn built_datasets(cfg: &ProjectConfig) -> Result<Vec<PathBuf>, PipelineError> {
    Ok(cfg.task_specs()?.iter().map(|s| dataset_path(cfg, &s.name)).filter(|p| p.exists()).collect())
}
