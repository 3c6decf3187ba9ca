use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{format_signed_percent, CellMetrics, Confusion};
use crate::backend::Prediction;
use crate::Metrics;

/// Table of published accuracies, one row per (model, shots).
pub const PUBLISHED_ACCURACY_CSV: &str = include_str!("../../fixtures/published_accuracy.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config_digest: String,
    /// Column order for rendered tables.
    pub tasks: Vec<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub task: String,
    pub shots: usize,
    pub metrics: Metrics,
}

/// Metrics for every (task, shots) cell of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<ReportCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no cells in common")]
    NoOverlap,
    #[error("malformed table line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
}

impl EvalReport {
    /// Groups predictions by (task, shots) and scores each group against the
    /// truth labels the predictions carry.
    pub fn from_predictions(predictions: &[Prediction], mut metadata: ReportMetadata) -> Self {
        let mut groups: BTreeMap<(String, usize), (Confusion, u64)> = BTreeMap::new();
        for p in predictions {
            let entry = groups.entry((p.task.clone(), p.shots)).or_default();
            let predicted = p.parsed.label();
            if predicted.is_none() {
                entry.1 += 1;
            }
            entry.0.add(p.truth, predicted);
        }
        for (task, _) in groups.keys() {
            if !metadata.tasks.contains(task) {
                metadata.tasks.push(task.clone());
            }
        }
        let order: HashMap<&str, usize> = metadata.tasks.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut cells: Vec<ReportCell> = groups
            .into_iter()
            .map(|((task, shots), (confusion, failures))| ReportCell {
                task,
                shots,
                metrics: CellMetrics::from_confusion(confusion, failures),
            })
            .collect();
        cells.sort_by_key(|c| (order[c.task.as_str()], c.shots));
        Self { metadata, cells }
    }

    pub fn cell(&self, task: &str, shots: usize) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.task == task && c.shots == shots)
    }

    pub fn shot_counts(&self) -> Vec<usize> {
        let mut shots: Vec<usize> = self.cells.iter().map(|c| c.shots).collect();
        shots.sort_unstable();
        shots.dedup();
        shots
    }
}

/// Renders one report. Markdown is the accuracy table; CSV and JSON keep every count.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_table(std::slice::from_ref(report)),
        ReportFormat::Csv => render_csv(std::slice::from_ref(report)),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("serializable report") + "\n",
    }
}

fn column_order(reports: &[EvalReport]) -> Vec<&str> {
    let mut tasks: Vec<&str> = Vec::new();
    for r in reports {
        let named = r.metadata.tasks.iter().map(String::as_str);
        for t in named.chain(r.cells.iter().map(|c| c.task.as_str())) {
            if !tasks.contains(&t) {
                tasks.push(t);
            }
        }
    }
    tasks
}

/// Accuracy table: one row per (model, shots), one column per task. Cells
/// without data show `--`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let tasks = column_order(reports);
    let mut out = String::from("| model | shot |");
    for t in &tasks {
        write!(out, " {t} |").unwrap();
    }
    out.push_str("\n|---|---:|");
    for _ in &tasks {
        out.push_str("---:|");
    }
    out.push('\n');
    for r in reports {
        for shots in r.shot_counts() {
            write!(out, "| {} | {shots} |", r.metadata.model).unwrap();
            for t in &tasks {
                let v = r.cell(t, shots).map_or_else(|| "--".to_string(), |c| c.metrics.accuracy_display());
                write!(out, " {v} |").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// One line per cell with full-precision values and raw counts.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "model,shots,task,n,n_positive,n_negative,tp,fp,tn,fn,parse_failures,accuracy,recall_positive,recall_negative\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        for c in &r.cells {
            let m = &c.metrics;
            let k = m.confusion;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(&r.metadata.model),
                c.shots,
                csv_field(&c.task),
                m.n,
                m.n_positive,
                m.n_negative,
                k.tp,
                k.fp,
                k.tn,
                k.fn_,
                m.parse_failures,
                m.accuracy,
                opt(m.recall_positive),
                opt(m.recall_negative)
            )
            .unwrap();
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Accuracy change from `a` to `b` on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub task: String,
    pub shots: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub delta: f64,
    /// Signed one-decimal rendering, e.g. `+21.1`.
    pub delta_display: String,
}

/// Per-cell accuracy deltas `b - a` over the cells both reports contain.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Vec<CellDelta>, ReportError> {
    let mut out = Vec::new();
    for ca in &a.cells {
        let Some(cb) = b.cell(&ca.task, ca.shots) else { continue };
        let (an, ad) = (ca.metrics.confusion.correct() as i128, ca.metrics.n as i128);
        let (bn, bd) = (cb.metrics.confusion.correct() as i128, cb.metrics.n as i128);
        out.push(CellDelta {
            task: ca.task.clone(),
            shots: ca.shots,
            accuracy_a: ca.metrics.accuracy,
            accuracy_b: cb.metrics.accuracy,
            delta: cb.metrics.accuracy - ca.metrics.accuracy,
            delta_display: format_signed_percent(bn * ad - an * bd, ad * bd),
        });
    }
    if out.is_empty() {
        return Err(ReportError::NoOverlap);
    }
    Ok(out)
}

pub fn render_deltas(a: &EvalReport, b: &EvalReport, deltas: &[CellDelta]) -> String {
    let mut out =
        format!("| task | shot | {} | {} | delta |\n|---|---:|---:|---:|---:|\n", a.metadata.model, b.metadata.model);
    for d in deltas {
        let ca = a.cell(&d.task, d.shots).expect("delta from a");
        let cb = b.cell(&d.task, d.shots).expect("delta from b");
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            d.task,
            d.shots,
            ca.metrics.accuracy_display(),
            cb.metrics.accuracy_display(),
            d.delta_display
        )
        .unwrap();
    }
    out
}

/// Reports holding only accuracies, parsed from a wide table with header
/// `model,shot,<task>...` and one-decimal percentages (or `--`).
///
/// Each value `x` becomes a cell of 1000 positive samples with `10x` correct,
/// so rendering reproduces the value exactly.
pub fn reports_from_accuracy_table(csv: &str) -> Result<Vec<EvalReport>, ReportError> {
    let bad = |line: usize, reason: String| ReportError::MalformedTable { line, reason };
    let mut lines = csv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty table".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "model" || cols[1] != "shot" {
        return Err(bad(1, "header must start with model,shot".into()));
    }
    let tasks: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(bad(line_no, format!("{} fields, expected {}", fields.len(), cols.len())));
        }
        let shots: usize = fields[1].parse().map_err(|_| bad(line_no, format!("bad shot {:?}", fields[1])))?;
        let idx = match reports.iter().position(|r| r.metadata.model == fields[0]) {
            Some(idx) => idx,
            None => {
                reports.push(EvalReport {
                    metadata: ReportMetadata {
                        model: fields[0].to_string(),
                        seed: 0,
                        timestamp: 0,
                        config_digest: String::new(),
                        tasks: tasks.clone(),
                        temperature: 0.0,
                        max_tokens: 0,
                    },
                    cells: Vec::new(),
                });
                reports.len() - 1
            }
        };
        for (task, raw) in tasks.iter().zip(&fields[2..]) {
            if *raw == "--" {
                continue;
            }
            let tenths = parse_tenths(raw).ok_or_else(|| bad(line_no, format!("bad accuracy {raw:?}")))?;
            let confusion = Confusion { tp: tenths, fn_: 1000 - tenths, ..Confusion::default() };
            reports[idx].cells.push(ReportCell {
                task: task.clone(),
                shots,
                metrics: CellMetrics::from_confusion(confusion, 0),
            });
        }
    }
    Ok(reports)
}

/// `"97.7"` → `977`; only one-decimal values in `[0, 100]`.
fn parse_tenths(raw: &str) -> Option<u64> {
    let (int, frac) = raw.split_once('.')?;
    if frac.len() != 1 || int.is_empty() || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v = int.parse::<u64>().ok()? * 10 + frac.parse::<u64>().ok()?;
    (v <= 1000).then_some(v)
}

/// The bundled published-accuracy table.
pub fn published_reports() -> Vec<EvalReport> {
    reports_from_accuracy_table(PUBLISHED_ACCURACY_CSV).expect("bundled table parses")
}
