//! Binary image-text relevancy tooling.
//!
//! The crate covers the whole life of a relevancy benchmark:
//!
//! - [`model`] and [`dataset`]: the canonical sample types and the line-delimited
//!   JSON dataset format.
//! - [`pairs`]: turning source corpora into positive and hard-negative pairs.
//! - [`prompt`]: few-shot context selection, conversation assembly and token budgeting.
//! - [`backend`]: a chat-completions client with retries, mock backends and answer parsing.
//! - [`eval`]: the evaluation loop, metrics and report rendering.
//! - [`pipeline`]: config-driven `build` / `eval` / `report` / `validate` commands.
//!
//! Metric arithmetic is written against the [`Scalar`] trait so the same code runs
//! over `f64` for reporting and over exact rationals where identities must hold
//! without rounding error.

pub mod backend;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod prompt;
pub mod scalar;
pub mod seed;

pub use scalar::Scalar;

/// Exact rational scalar used for metric identities and display rounding.
pub type Rational = num_rational::Ratio<i64>;

/// Per-cell metrics in floating point, as stored in reports.
pub type Metrics = eval::metrics::CellMetrics<f64>;
/// Per-cell metrics computed exactly.
pub type ExactMetrics = eval::metrics::CellMetrics<Rational>;
/// Similarity table with `f64` scores, the format read from disk.
pub type SimilarityTable = pairs::similarity::SimilarityScores<f64>;

pub use backend::{BackendConfig, BackendError, MockBackend, Prediction, RelevancyBackend};
pub use dataset::{load_dataset, save_dataset, DatasetError};
pub use eval::{compute_metrics, render_report, run_eval, EvalReport, RunConfig};
pub use model::{Label, MediaRef, RelevancySample, Split, TaskSpec, TextBlock, TextFormat};
pub use prompt::{assemble, count_tokens, select_context, ConversationPrompt, TokenBudget};
