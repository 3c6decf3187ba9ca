use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, ConfigError as BackendConfigError, HttpBackend, MockBackend, RelevancyBackend};
use crate::dataset::read_jsonl;
use crate::model::{Label, TaskSpec, TextFormat};
use crate::pairs::tasks::builtin_task;
use crate::pairs::{AugmentationBackend, FixedAugmenter, HoldoutFilter, NegativeOptions, PairingStrategyId};
use crate::prompt::{SelectionMode, TokenBudget};
use crate::seed::digest_hex;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("unterminated ${{...}} in config")]
    UnterminatedVar,
    #[error("task {0}: not a built-in task; set strategy and eval_instruction")]
    UnknownTask(String),
    #[error("task {0} listed twice")]
    DuplicateTask(String),
    #[error("task {0}: no source corpus configured")]
    MissingSource(String),
    #[error("task {task}: strategy {strategy} needs a similarity_tables entry")]
    MissingSimilarityTable { task: String, strategy: PairingStrategyId },
    #[error("task {0}: {1}")]
    InvalidTask(String, String),
    #[error("backend: {0}")]
    Backend(#[from] BackendConfigError),
    #[error("mock backend mode {0:?} needs {1}")]
    MockIncomplete(&'static str, &'static str),
    #[error("mock lookup table {path}: {message}")]
    LookupTable { path: PathBuf, message: String },
}

/// Replaces `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or(ConfigError::UnterminatedVar)?;
        let name = &after[..end];
        out.push_str(&lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// A task: either a built-in name or a full definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskEntry {
    Name(String),
    Custom(CustomTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTask {
    pub name: String,
    #[serde(default)]
    pub strategy: Option<PairingStrategyId>,
    #[serde(default)]
    pub eval_instruction: Option<String>,
    #[serde(default)]
    pub train_instruction_pool: Option<Vec<String>>,
    #[serde(default)]
    pub text_format: Option<TextFormat>,
}

impl TaskEntry {
    pub fn name(&self) -> &str {
        match self {
            TaskEntry::Name(n) => n,
            TaskEntry::Custom(c) => &c.name,
        }
    }

    /// Full definition: built-in defaults overlaid with any custom fields.
    pub fn resolve(&self) -> Result<TaskSpec, ConfigError> {
        let name = self.name();
        let builtin = builtin_task(name);
        let spec = match (self, builtin) {
            (TaskEntry::Name(_), Some(spec)) => spec,
            (TaskEntry::Name(_), None) => return Err(ConfigError::UnknownTask(name.to_string())),
            (TaskEntry::Custom(c), base) => {
                let strategy = c
                    .strategy
                    .or(base.as_ref().map(|b| b.strategy))
                    .ok_or_else(|| ConfigError::UnknownTask(name.to_string()))?;
                let eval_instruction = c
                    .eval_instruction
                    .clone()
                    .or(base.as_ref().map(|b| b.eval_instruction.clone()))
                    .ok_or_else(|| ConfigError::UnknownTask(name.to_string()))?;
                let train_instruction_pool = c
                    .train_instruction_pool
                    .clone()
                    .or(base.as_ref().map(|b| b.train_instruction_pool.clone()))
                    .unwrap_or_default();
                let text_format =
                    c.text_format.or(base.as_ref().map(|b| b.text_format)).unwrap_or(TextFormat::PlainParagraph);
                TaskSpec { name: name.to_string(), strategy, eval_instruction, train_instruction_pool, text_format }
            }
        };
        spec.validate().map_err(|e| ConfigError::InvalidTask(name.to_string(), e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub path: PathBuf,
    pub adapter: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    FixedAnswer,
    LookupTable,
    RuleBased,
}

/// Which backend answers prompts (or generates augmentation text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSection {
    Http(BackendConfig),
    Mock {
        mode: MockMode,
        #[serde(default)]
        answer: Option<String>,
        /// Line-delimited `{"sample_id": .., "label": ..}` records.
        #[serde(default)]
        table: Option<PathBuf>,
        #[serde(default = "default_mock_parallel")]
        max_parallel_requests: usize,
    },
}

fn default_mock_parallel() -> usize {
    4
}

#[derive(Debug, Deserialize)]
struct LookupRow {
    sample_id: String,
    label: Label,
}

impl BackendSection {
    pub fn model_name(&self) -> String {
        match self {
            BackendSection::Http(cfg) => cfg.model_name.clone(),
            BackendSection::Mock { mode, .. } => match mode {
                MockMode::FixedAnswer => "mock-fixed".into(),
                MockMode::LookupTable => "mock-lookup".into(),
                MockMode::RuleBased => "mock-rule-based".into(),
            },
        }
    }

    pub fn max_parallel_requests(&self) -> usize {
        match self {
            BackendSection::Http(cfg) => cfg.max_parallel_requests,
            BackendSection::Mock { max_parallel_requests, .. } => *max_parallel_requests,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            BackendSection::Http(cfg) => Ok(cfg.validate()?),
            BackendSection::Mock { mode, answer, table, max_parallel_requests } => {
                if *max_parallel_requests == 0 {
                    return Err(BackendConfigError::NoParallelism.into());
                }
                match mode {
                    MockMode::FixedAnswer if answer.is_none() => {
                        Err(ConfigError::MockIncomplete("fixed_answer", "answer"))
                    }
                    MockMode::LookupTable if table.is_none() => {
                        Err(ConfigError::MockIncomplete("lookup_table", "table"))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    fn mock(&self) -> Result<Option<MockBackend>, ConfigError> {
        let BackendSection::Mock { mode, answer, table, .. } = self else {
            return Ok(None);
        };
        Ok(Some(match mode {
            MockMode::FixedAnswer => MockBackend::FixedAnswer(answer.clone().unwrap_or_default()),
            MockMode::RuleBased => MockBackend::RuleBased,
            MockMode::LookupTable => {
                let path = table.as_ref().ok_or(ConfigError::MockIncomplete("lookup_table", "table"))?;
                let rows = read_jsonl::<LookupRow>(path)
                    .map_err(|e| ConfigError::LookupTable { path: path.clone(), message: e.to_string() })?;
                MockBackend::LookupTable(
                    rows.into_iter().map(|(_, r)| (r.sample_id, r.label)).collect::<HashMap<_, _>>(),
                )
            }
        }))
    }

    pub fn relevancy_backend(&self, audit: Option<&Path>) -> Result<Box<dyn RelevancyBackend>, ConfigError> {
        if let Some(mock) = self.mock()? {
            return Ok(Box::new(mock));
        }
        let BackendSection::Http(cfg) = self else { unreachable!() };
        Ok(Box::new(http_backend(cfg, audit)?))
    }

    pub fn augmentation_backend(&self, audit: Option<&Path>) -> Result<Box<dyn AugmentationBackend>, ConfigError> {
        match self {
            BackendSection::Http(cfg) => Ok(Box::new(http_backend(cfg, audit)?)),
            BackendSection::Mock { answer, .. } => {
                Ok(Box::new(FixedAugmenter::new(answer.clone().unwrap_or_default())))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let BackendSection::Mock { table: Some(t), .. } = self {
            *t = base.join(&*t);
        }
    }
}

fn http_backend(cfg: &BackendConfig, audit: Option<&Path>) -> Result<HttpBackend, ConfigError> {
    let mut backend = HttpBackend::new(cfg.clone());
    if let Some(path) = audit {
        let log = crate::backend::AuditLog::open(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        backend = backend.with_audit(log);
    }
    Ok(backend)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub tasks: Option<Vec<String>>,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_mode")]
    pub mode: SelectionMode,
}

fn default_shots() -> Vec<usize> {
    vec![0, 2]
}
fn default_mode() -> SelectionMode {
    SelectionMode::BalancedRandom
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { tasks: None, shots: default_shots(), mode: default_mode() }
    }
}

/// The declarative project file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tasks: Vec<TaskEntry>,
    pub sources: BTreeMap<String, SourceConfig>,
    #[serde(default)]
    pub similarity_tables: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub holdouts: Vec<HoldoutFilter>,
    #[serde(default)]
    pub negatives: NegativeOptions,
    #[serde(default)]
    pub budget: TokenBudget,
    pub backend: BackendSection,
    #[serde(default)]
    pub augmentation_backend: Option<BackendSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ProjectConfig {
    /// Reads, interpolates and validates a config file. Relative paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, path)
    }

    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let text = interpolate_env(text, |name| std::env::var(name).ok())?;
        let mut cfg: ProjectConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = base.join(&self.output_dir);
        for s in self.sources.values_mut() {
            s.path = base.join(&s.path);
        }
        for p in self.similarity_tables.values_mut() {
            *p = base.join(&*p);
        }
        self.backend.resolve_paths(base);
        if let Some(b) = &mut self.augmentation_backend {
            b.resolve_paths(base);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for entry in &self.tasks {
            let spec = entry.resolve()?;
            if !seen.insert(spec.name.clone()) {
                return Err(ConfigError::DuplicateTask(spec.name));
            }
            if !self.sources.contains_key(&spec.name) {
                return Err(ConfigError::MissingSource(spec.name));
            }
            if spec.strategy.needs_similarity() && !self.similarity_tables.contains_key(&spec.name) {
                return Err(ConfigError::MissingSimilarityTable { task: spec.name, strategy: spec.strategy });
            }
        }
        self.budget.validate().map_err(|e| ConfigError::InvalidTask("budget".into(), e.to_string()))?;
        self.backend.validate()?;
        if let Some(b) = &self.augmentation_backend {
            b.validate()?;
        }
        Ok(())
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        self.tasks.iter().map(TaskEntry::resolve).collect()
    }

    /// SHA-256 of the canonical JSON form. Tokens are never serialized.
    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("serializable config"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
output_dir = "out"
tasks = ["wiki", { name = "cars", eval_instruction = "Is this the car described? Answer Yes or No." }]

[sources.wiki]
path = "corpora/wiki.jsonl"
adapter = "wit"

[sources.cars]
path = "corpora/cars.jsonl"
adapter = "fine_grained"

[backend]
kind = "mock"
mode = "rule_based"
"#;

    #[test]
    fn minimal_config() {
        let cfg = ProjectConfig::from_toml(MINIMAL, Path::new("/base"), Path::new("c.toml")).unwrap();
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
        assert_eq!(cfg.sources["wiki"].path, Path::new("/base/corpora/wiki.jsonl"));
        let specs = cfg.task_specs().unwrap();
        assert_eq!(specs[1].strategy, PairingStrategyId::CrossClassDescription);
        assert!(specs[1].eval_instruction.starts_with("Is this the car"));
        assert_eq!(cfg.eval.shots, vec![0, 2]);
        assert_eq!(cfg.digest(), cfg.clone().digest());
    }

    #[test]
    fn http_backend_section() {
        let text = MINIMAL.replace(
            "kind = \"mock\"\nmode = \"rule_based\"",
            "kind = \"http\"\nendpoint_url = \"http://localhost:1/v1/chat/completions\"\nmodel_name = \"m\"\nauth_token = \"${TOKEN_FOR_TEST}\"",
        );
        let text = interpolate_env(&text, |n| (n == "TOKEN_FOR_TEST").then(|| "sk-abc".to_string())).unwrap();
        let cfg = ProjectConfig::from_toml(&text, Path::new("/b"), Path::new("c.toml")).unwrap();
        let BackendSection::Http(http) = &cfg.backend else { panic!("expected http") };
        assert_eq!(http.auth_token.as_ref().unwrap().expose(), "sk-abc");
        assert!(!serde_json::to_string(&cfg).unwrap().contains("sk-abc"));
    }

    #[test]
    fn interpolation_errors() {
        assert!(matches!(interpolate_env("a ${NOPE} b", |_| None), Err(ConfigError::MissingEnv(v)) if v == "NOPE"));
        assert!(matches!(interpolate_env("a ${NOPE", |_| None), Err(ConfigError::UnterminatedVar)));
        assert_eq!(interpolate_env("x=${A}${A}", |_| Some("1".into())).unwrap(), "x=11");
    }

    #[test]
    fn similarity_tasks_need_tables() {
        let text = MINIMAL.replace("tasks = [\"wiki\"", "tasks = [\"textvqa\", \"wiki\"").replace(
            "[sources.cars]",
            "[sources.textvqa]\npath = \"t.jsonl\"\nadapter = \"textvqa\"\n\n[sources.cars]",
        );
        let err = ProjectConfig::from_toml(&text, Path::new("/b"), Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::MissingSimilarityTable { .. }), "{err}");
    }

    #[test]
    fn unknown_task_name() {
        let text = MINIMAL.replace("tasks = [\"wiki\"", "tasks = [\"nope\"");
        let err = ProjectConfig::from_toml(&text, Path::new("/b"), Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownTask(t) if t == "nope"));
    }
}
