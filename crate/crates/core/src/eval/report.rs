use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metric, Weighting};
use crate::backends::{BackendDescriptor, PromptMode};
use crate::oracle::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    /// Percent with two decimals, "mean±std" when there are several runs.
    pub fn cell(&self) -> String {
        match self.std {
            Some(sd) => format!("{:.2}±{:.2}", self.mean * 100.0, sd * 100.0),
            None => format!("{:.2}", self.mean * 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub dataset_version: String,
    pub catalog_version: String,
    pub synonyms_version: String,
    pub seed: u64,
    pub runs: usize,
    pub backend: BackendDescriptor,
    pub weighting: Weighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskId,
    pub method: String,
    pub mode: PromptMode,
    pub runs: usize,
    pub objects: usize,
    pub extra_predictions: usize,
    /// `None` where the metric is undefined (no ambiguous objects).
    pub metrics: BTreeMap<Metric, Option<Aggregate>>,
}

impl ReportRow {
    pub fn cell(&self, m: Metric) -> String {
        match self.metrics.get(&m) {
            Some(Some(a)) => a.cell(),
            _ => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn row(&self, task: TaskId, mode: PromptMode) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.task == task && r.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Plain,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "plain" | "txt" | "text" => Ok(ReportFormat::Plain),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

/// Every metric, or state detection alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Columns {
    All,
    StateOnly,
}

impl Columns {
    fn metrics(self) -> &'static [Metric] {
        match self {
            Columns::All => &Metric::ALL,
            Columns::StateOnly => &[Metric::StaA],
        }
    }
}

fn table(report: &MetricsReport, columns: Columns) -> Vec<Vec<String>> {
    let mut rows = vec![["Task", "Method"].iter().map(|s| s.to_string()).chain(columns.metrics().iter().map(|m| m.to_string())).collect()];
    for r in &report.rows {
        let mut row = vec![r.task.to_string(), r.method.clone()];
        row.extend(columns.metrics().iter().map(|m| r.cell(*m)));
        rows.push(row);
    }
    rows
}

/// Rows are task × method; byte-stable for equal input.
pub fn render_report(report: &MetricsReport, format: ReportFormat, columns: Columns) -> Result<String, EvalError> {
    if report.rows.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let cells = table(report, columns);
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for row in &cells {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            for (i, row) in cells.iter().enumerate() {
                let _ = writeln!(out, "| {} |", row.join(" | "));
                if i == 0 {
                    let _ = writeln!(out, "|{}", "---|".repeat(row.len()));
                }
            }
        }
        ReportFormat::Plain => {
            let widths: Vec<usize> = (0..cells[0].len())
                .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
                .collect();
            for row in &cells {
                let line: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (text, w))| {
                        let pad = w - text.chars().count();
                        if c < 2 { format!("{text}{}", " ".repeat(pad)) } else { format!("{}{text}", " ".repeat(pad)) }
                    })
                    .collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(values: &[(Metric, Option<Aggregate>)]) -> MetricsReport {
        MetricsReport {
            provenance: Provenance {
                dataset: "d".into(),
                dataset_version: "v".into(),
                catalog_version: "c".into(),
                synonyms_version: "s".into(),
                seed: 1,
                runs: 3,
                backend: BackendDescriptor { id: "oracle".into(), label: "Oracle".into(), concurrent_safe: true },
                weighting: Weighting::Object,
                temperature: None,
                prompt_hashes: vec![],
            },
            rows: vec![ReportRow {
                task: TaskId::T2,
                method: "Oracle(Z)".into(),
                mode: PromptMode::ZeroShot,
                runs: 3,
                objects: 4,
                extra_predictions: 0,
                metrics: values.iter().cloned().collect(),
            }],
        }
    }

    #[test]
    fn cells() {
        assert_eq!(Aggregate { mean: 0.8, std: Some(0.1), n: 3 }.cell(), "80.00±10.00");
        assert_eq!(Aggregate { mean: 1.0, std: None, n: 1 }.cell(), "100.00");
        assert_eq!(Aggregate { mean: 1.0, std: Some(0.0), n: 3 }.cell(), "100.00±0.00");
    }

    #[test]
    fn formats() {
        let full = Aggregate { mean: 1.0, std: Some(0.0), n: 3 };
        let r = report(&[(Metric::StaA, Some(full)), (Metric::AmbA, None)]);
        let md = render_report(&r, ReportFormat::Markdown, Columns::All).unwrap();
        assert!(md.starts_with("| Task | Method | StaA | AmbA |"));
        assert!(md.contains("| T2 | Oracle(Z) | 100.00±0.00 | - | - |"));
        let csv = render_report(&r, ReportFormat::Csv, Columns::StateOnly).unwrap();
        assert_eq!(csv, "Task,Method,StaA\nT2,Oracle(Z),100.00±0.00\n");
        let plain = render_report(&r, ReportFormat::Plain, Columns::StateOnly).unwrap();
        assert_eq!(plain, "Task  Method            StaA\nT2    Oracle(Z)  100.00±0.00\n");
        let empty = MetricsReport { rows: vec![], ..r.clone() };
        assert_eq!(render_report(&empty, ReportFormat::Plain, Columns::All), Err(EvalError::NoRuns));
        assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
    }
}
