use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{parse_label, BackendError, BudgetStatus, Parsed, Prediction, RelevancyBackend};
use crate::dataset::{read_jsonl, DatasetError};
use crate::model::{Label, RelevancySample, Split};
use crate::pairs::tasks::{base_task_name, builtin_task};
use crate::prompt::{
    assemble, AssembleError, BudgetError, ContextSelectorConfig, ConversationPrompt, SelectError, SelectionMode,
    TokenBudget, TokenCounter, WordPunctCounter,
};
use crate::seed::derive_seed;

/// Share of a cell's requests that may fail before the cell is abandoned.
const MAX_FAILED_PERCENT: usize = 5;

/// Where eval instructions come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionSource {
    /// The task's fixed evaluation instruction.
    #[default]
    EvalHandcrafted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tasks: Vec<String>,
    pub shots: Vec<usize>,
    pub mode: SelectionMode,
    #[serde(default = "default_first_label")]
    pub first_label: Label,
    #[serde(default)]
    pub budget: TokenBudget,
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub instruction_source: InstructionSource,
    /// Per-task instruction overrides; other tasks use the built-in definition.
    #[serde(default)]
    pub instructions: BTreeMap<String, String>,
}

fn default_first_label() -> Label {
    Label::Relevant
}
fn default_parallel() -> usize {
    4
}

impl RunConfig {
    pub fn new(tasks: Vec<String>, shots: Vec<usize>, seed: u64) -> Self {
        Self {
            tasks,
            shots,
            mode: SelectionMode::BalancedRandom,
            first_label: Label::Relevant,
            budget: TokenBudget::default(),
            seed,
            max_parallel_requests: default_parallel(),
            instruction_source: InstructionSource::EvalHandcrafted,
            instructions: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.tasks.is_empty() {
            return Err(EvalError::NoTasks);
        }
        if self.shots.is_empty() {
            return Err(EvalError::NoShots);
        }
        if self.max_parallel_requests == 0 {
            return Err(EvalError::NoParallelism);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.tasks.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(EvalError::DuplicateTask(dup.clone()));
        }
        self.budget.validate()?;
        Ok(())
    }

    pub fn instruction_for(&self, task: &str) -> Result<String, EvalError> {
        if let Some(text) = self.instructions.get(task).or_else(|| self.instructions.get(base_task_name(task))) {
            return Ok(text.clone());
        }
        match self.instruction_source {
            InstructionSource::EvalHandcrafted => builtin_task(base_task_name(task))
                .map(|spec| spec.eval_instruction)
                .ok_or_else(|| EvalError::UnknownTask(task.to_string())),
        }
    }

    /// Context seed for one sample at one shot count.
    pub fn sample_seed(&self, sample_id: &str, shots: usize) -> u64 {
        derive_seed(self.seed, &[sample_id, &shots.to_string()])
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tasks requested")]
    NoTasks,
    #[error("no shot counts requested")]
    NoShots,
    #[error("max_parallel_requests must be at least 1")]
    NoParallelism,
    #[error("task {0} requested twice")]
    DuplicateTask(String),
    #[error("no instruction known for task {0}")]
    UnknownTask(String),
    #[error("task {0} has no test samples")]
    NoTestSamples(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("task {task}, {shots} shots, sample {sample_id}: {source}")]
    Context { task: String, shots: usize, sample_id: String, source: SelectError },
    #[error("task {task}, sample {sample_id}: {source}")]
    Assemble { task: String, sample_id: String, source: AssembleError },
    #[error("sample {sample_id}: {source}")]
    Backend { sample_id: String, source: BackendError },
    #[error("cell ({task}, {shots} shots) failed: {failed} of {total} requests exhausted retries")]
    CellFailed { task: String, shots: usize, failed: usize, total: usize },
    #[error("prediction store {path}: {source}")]
    Store { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    StoreFile(#[from] DatasetError),
}

/// Append-only prediction journal used to resume interrupted runs.
#[derive(Debug)]
pub struct PredictionStore {
    path: PathBuf,
    done: HashMap<(String, usize), Prediction>,
    out: Mutex<BufWriter<File>>,
}

impl PredictionStore {
    pub fn open(path: &Path) -> Result<Self, EvalError> {
        let io_err = |source| EvalError::Store { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut done = HashMap::new();
        if path.exists() {
            for (_, p) in read_jsonl::<Prediction>(path)? {
                done.insert((p.sample_id.clone(), p.shots), p);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        Ok(Self { path: path.to_path_buf(), done, out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn get(&self, sample_id: &str, shots: usize) -> Option<&Prediction> {
        self.done.get(&(sample_id.to_string(), shots))
    }

    fn append(&self, p: &Prediction) -> Result<(), EvalError> {
        let line = serde_json::to_string(p).expect("serializable prediction");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|source| EvalError::Store { path: self.path.clone(), source })
    }
}

/// Collaborators of an evaluation run.
pub struct EvalDeps<'a> {
    pub backend: &'a dyn RelevancyBackend,
    pub tokenizer: &'a dyn TokenCounter,
    pub store: Option<&'a PredictionStore>,
}

/// Evaluates every test sample of every task at every shot count, with the
/// default tokenizer and no resume journal.
pub fn run_eval(
    dataset: &[RelevancySample],
    cfg: &RunConfig,
    backend: &dyn RelevancyBackend,
) -> Result<Vec<Prediction>, EvalError> {
    let tokenizer = WordPunctCounter::default();
    run_eval_with(dataset, cfg, &EvalDeps { backend, tokenizer: &tokenizer, store: None })
}

struct Job {
    query: RelevancySample,
    prompt: ConversationPrompt,
}

/// Like [`run_eval`], with an explicit tokenizer and optional journal.
///
/// Predictions come back sorted by task (in `cfg.tasks` order), shots and
/// sample id. Samples already in the journal are not sent again.
pub fn run_eval_with(
    dataset: &[RelevancySample],
    cfg: &RunConfig,
    deps: &EvalDeps<'_>,
) -> Result<Vec<Prediction>, EvalError> {
    cfg.validate()?;
    let mut shots = cfg.shots.clone();
    shots.sort_unstable();
    shots.dedup();

    let mut all = Vec::new();
    for task in &cfg.tasks {
        let instruction = cfg.instruction_for(task)?;
        let base = base_task_name(task);
        let mut tests: Vec<&RelevancySample> =
            dataset.iter().filter(|s| s.task == *task && s.split == Split::Test).collect();
        if tests.is_empty() {
            return Err(EvalError::NoTestSamples(task.clone()));
        }
        tests.sort_by(|a, b| a.id.cmp(&b.id));
        let pool: Vec<RelevancySample> = dataset
            .iter()
            .filter(|s| s.split == Split::Train && (s.task == *task || s.task == base))
            .cloned()
            .collect();

        for &k in &shots {
            let cell = run_cell(task, k, &instruction, &tests, &pool, cfg, deps)?;
            all.extend(cell);
        }
    }
    Ok(all)
}

fn run_cell(
    task: &str,
    shots: usize,
    instruction: &str,
    tests: &[&RelevancySample],
    pool: &[RelevancySample],
    cfg: &RunConfig,
    deps: &EvalDeps<'_>,
) -> Result<Vec<Prediction>, EvalError> {
    let mut done: Vec<Prediction> = Vec::with_capacity(tests.len());
    let mut jobs = Vec::new();
    for query in tests {
        if let Some(p) = deps.store.and_then(|s| s.get(&query.id, shots)) {
            done.push(p.clone());
            continue;
        }
        let selector = ContextSelectorConfig {
            mode: cfg.mode,
            shots,
            seed: cfg.sample_seed(&query.id, shots),
            first_label: cfg.first_label,
        };
        let contexts = crate::prompt::select_context(pool, query, &selector).map_err(|source| EvalError::Context {
            task: task.to_string(),
            shots,
            sample_id: query.id.clone(),
            source,
        })?;
        match assemble(instruction, &contexts, query, &cfg.budget, deps.tokenizer) {
            Ok(prompt) => jobs.push(Job { query: (*query).clone(), prompt }),
            Err(AssembleError::Budget(BudgetError::BudgetExceeded { token_count, .. })) => {
                tracing::warn!(task, shots, sample = %query.id, token_count, "prompt over budget, not sent");
                let p = Prediction {
                    sample_id: query.id.clone(),
                    task: task.to_string(),
                    shots,
                    truth: query.label,
                    raw_text: String::new(),
                    parsed: Parsed::Failure("budget_exceeded".into()),
                    latency_ms: 0,
                    budget_used: BudgetStatus::Exceeded,
                };
                if let Some(store) = deps.store {
                    store.append(&p)?;
                }
                done.push(p);
            }
            Err(source) => {
                return Err(EvalError::Assemble { task: task.to_string(), sample_id: query.id.clone(), source })
            }
        }
    }

    let total = tests.len();
    let (fresh, failed, fatal) = dispatch(task, shots, &jobs, cfg.max_parallel_requests, deps)?;
    if let Some(e) = fatal {
        for p in &fresh {
            if let Some(store) = deps.store {
                store.append(p)?;
            }
        }
        return Err(e);
    }
    if failed.len() * 100 > total * MAX_FAILED_PERCENT {
        for p in &fresh {
            if let Some(store) = deps.store {
                store.append(p)?;
            }
        }
        return Err(EvalError::CellFailed { task: task.to_string(), shots, failed: failed.len(), total });
    }
    for p in fresh.into_iter().chain(failed) {
        if let Some(store) = deps.store {
            store.append(&p)?;
        }
        done.push(p);
    }
    done.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(done)
}

type Dispatched = (Vec<Prediction>, Vec<Prediction>, Option<EvalError>);

/// Sends prompts on up to `parallel` worker threads. Returns answered
/// predictions, failure predictions for requests that ran out of retries, and
/// the first non-retryable error if any.
fn dispatch(
    task: &str,
    shots: usize,
    jobs: &[Job],
    parallel: usize,
    deps: &EvalDeps<'_>,
) -> Result<Dispatched, EvalError> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<(String, u64), BackendError>)>();
    let workers = parallel.min(jobs.len()).max(1);
    let mut results: Vec<Option<Result<(String, u64), BackendError>>> = (0..jobs.len()).map(|_| None).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let started = Instant::now();
                let outcome = deps
                    .backend
                    .answer(&job.query.id, &job.prompt)
                    .map(|raw| (raw, started.elapsed().as_millis() as u64));
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            results[i] = Some(outcome);
        }
    });

    let mut fresh = Vec::new();
    let mut failed = Vec::new();
    let mut fatal = None;
    for (job, outcome) in jobs.iter().zip(results) {
        let outcome = outcome.expect("every job reports back");
        let base = Prediction {
            sample_id: job.query.id.clone(),
            task: task.to_string(),
            shots,
            truth: job.query.label,
            raw_text: String::new(),
            parsed: Parsed::Failure(String::new()),
            latency_ms: 0,
            budget_used: job.prompt.budget_used.into(),
        };
        match outcome {
            Ok((raw, latency_ms)) => {
                fresh.push(Prediction { parsed: parse_label(&raw), raw_text: raw, latency_ms, ..base })
            }
            Err(e @ BackendError::ExhaustedRetries { .. }) | Err(e @ BackendError::Timeout) => {
                tracing::warn!(task, shots, sample = %job.query.id, "request failed: {e}");
                failed.push(Prediction { parsed: Parsed::Failure("request_failed".into()), ..base });
            }
            Err(source) => {
                if fatal.is_none() {
                    fatal = Some(EvalError::Backend { sample_id: job.query.id.clone(), source });
                }
            }
        }
    }
    Ok((fresh, failed, fatal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::model::fixtures::sample;

    fn dataset() -> Vec<RelevancySample> {
        let mut out = Vec::new();
        for i in 0..4 {
            let label = if i % 2 == 0 { Label::Relevant } else { Label::NotRelevant };
            let mut s = sample(&format!("t{i}"), label);
            s.split = Split::Test;
            out.push(s);
        }
        out.push(sample("p0", Label::Relevant));
        out.push(sample("p1", Label::NotRelevant));
        out
    }

    fn lookup(ds: &[RelevancySample]) -> MockBackend {
        MockBackend::LookupTable(ds.iter().map(|s| (s.id.clone(), s.label)).collect())
    }

    #[test]
    fn lookup_all_correct() {
        let ds = dataset();
        let cfg = RunConfig::new(vec!["llava".into()], vec![0], 1);
        let preds = run_eval(&ds, &cfg, &lookup(&ds)).unwrap();
        assert_eq!(preds.len(), 4);
        assert!(preds.iter().all(|p| p.is_correct()));
    }

    #[test]
    fn two_shots_use_the_whole_pool() {
        struct Check;
        impl RelevancyBackend for Check {
            fn answer(&self, _: &str, prompt: &ConversationPrompt) -> Result<String, BackendError> {
                let uris: Vec<_> = prompt.context_turns.iter().map(|c| c.image.uri.as_str()).collect();
                assert_eq!(uris, ["img/p0.jpg", "img/p1.jpg"]);
                Ok("Yes".into())
            }
            fn model_name(&self) -> String {
                "check".into()
            }
        }
        let cfg = RunConfig::new(vec!["llava".into()], vec![2], 1);
        let preds = run_eval(&dataset(), &cfg, &Check).unwrap();
        assert_eq!(preds.len(), 4);
    }

    #[test]
    fn empty_task_list_is_rejected() {
        let cfg = RunConfig::new(vec![], vec![0], 1);
        assert!(matches!(run_eval(&dataset(), &cfg, &MockBackend::RuleBased), Err(EvalError::NoTasks)));
    }

    #[test]
    fn lookup_miss_is_fatal() {
        let ds = dataset();
        let cfg = RunConfig::new(vec!["llava".into()], vec![0], 1);
        let m = MockBackend::LookupTable(HashMap::new());
        assert!(matches!(
            run_eval(&ds, &cfg, &m),
            Err(EvalError::Backend { source: BackendError::UnknownSample(_), .. })
        ));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let cfg = RunConfig::new(vec!["llava".into()], vec![0, 2], 5);
        let backend = lookup(&ds);
        let tok = WordPunctCounter::default();
        let strip = |mut v: Vec<Prediction>| {
            v.iter_mut().for_each(|p| p.latency_ms = 0);
            v
        };
        let full = strip(run_eval(&ds, &cfg, &backend).unwrap());

        // First pass only covers 0 shots, as if interrupted.
        {
            let store = PredictionStore::open(&path).unwrap();
            let partial = RunConfig { shots: vec![0], ..cfg.clone() };
            run_eval_with(&ds, &partial, &EvalDeps { backend: &backend, tokenizer: &tok, store: Some(&store) })
                .unwrap();
        }
        struct Counting<'a>(&'a MockBackend, AtomicUsize);
        impl RelevancyBackend for Counting<'_> {
            fn answer(&self, id: &str, p: &ConversationPrompt) -> Result<String, BackendError> {
                self.1.fetch_add(1, Ordering::SeqCst);
                self.0.answer(id, p)
            }
            fn model_name(&self) -> String {
                self.0.model_name()
            }
        }
        let counting = Counting(&backend, AtomicUsize::new(0));
        let store = PredictionStore::open(&path).unwrap();
        assert_eq!(store.len(), 4);
        let resumed =
            run_eval_with(&ds, &cfg, &EvalDeps { backend: &counting, tokenizer: &tok, store: Some(&store) }).unwrap();
        assert_eq!(counting.1.load(Ordering::SeqCst), 4);
        assert_eq!(strip(resumed), full);
    }

    #[test]
    fn too_many_failures_abort_the_cell() {
        struct Down;
        impl RelevancyBackend for Down {
            fn answer(&self, _: &str, _: &ConversationPrompt) -> Result<String, BackendError> {
                Err(BackendError::ExhaustedRetries { attempts: 1, last: Box::new(BackendError::Timeout) })
            }
            fn model_name(&self) -> String {
                "down".into()
            }
        }
        let cfg = RunConfig::new(vec!["llava".into()], vec![0], 1);
        assert!(matches!(run_eval(&dataset(), &cfg, &Down), Err(EvalError::CellFailed { failed: 4, total: 4, .. })));
    }
}
