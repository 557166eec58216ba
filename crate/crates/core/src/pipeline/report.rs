use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{PipelineError, RunManifest};
use crate::evaluation::EvaluationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?} (expected json, csv or md)")),
        }
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    name: &'a str,
    strategy: String,
    model: &'a str,
    test_size: usize,
    failed: usize,
    report: &'a EvaluationReport,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Render one row per run, in the order given. Percentages use two
/// decimals.
pub fn emit_report(runs: &[RunManifest], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let rows: Vec<JsonRow> = runs
                .iter()
                .map(|m| JsonRow {
                    name: &m.name,
                    strategy: m.config.strategy.label(),
                    model: m.model(),
                    test_size: m.test_size,
                    failed: m.failed,
                    report: &m.report,
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("report serialises");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["strategy", "model", "precision", "recall", "f1", "tp", "fp", "fn", "products", "failed"])
                .expect("in-memory write");
            for m in runs {
                let t = &m.report.totals;
                w.write_record([
                    m.config.strategy.label(),
                    m.model().to_string(),
                    pct(m.report.precision),
                    pct(m.report.recall),
                    pct(m.report.f1),
                    t.tp.to_string(),
                    t.fp.to_string(),
                    t.fn_.to_string(),
                    m.test_size.to_string(),
                    m.failed.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let mut s = String::from("| Strategy | Model | P | R | F1 |\n|---|---|---:|---:|---:|\n");
            for m in runs {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    m.config.strategy.label().replace('|', "\\|"),
                    m.model().replace('|', "\\|"),
                    pct(m.report.precision),
                    pct(m.report.recall),
                    pct(m.report.f1),
                ));
            }
            s
        }
    }
}

pub fn write_report(runs: &[RunManifest], format: ReportFormat, path: &Path) -> Result<(), PipelineError> {
    fs::write(path, emit_report(runs, format)).map_err(|e| PipelineError::io(path, e))
}
