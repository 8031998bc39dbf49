//! Tabular results and their CSV, JSON and Markdown renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use fixpoint::Rep;
use serde::{Deserialize, Serialize};

use crate::memory::{sig2_truncated, Method};
use crate::Precision;

/// Column order of every tabular output.
pub const COLUMNS: [&str; 11] = [
    "experiment",
    "method",
    "rep",
    "d",
    "K",
    "precision",
    "wall_time_s",
    "memory_bytes",
    "deviation_rmse",
    "loglik",
    "diverged",
];

pub const POSTERIOR_COLUMNS: [&str; 4] = ["iteration", "component", "mean", "stddev"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub method: String,
    pub rep: Option<Rep>,
    pub d: usize,
    #[serde(rename = "K")]
    pub steps: usize,
    pub precision: Precision,
    pub wall_time_s: Option<f64>,
    pub memory_bytes: Option<u64>,
    pub deviation_rmse: Option<f64>,
    pub loglik: Option<f64>,
    pub diverged: bool,
}

/// Marginal of one component of `p(x0 | y)` at one EM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub iteration: usize,
    pub component: usize,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub posterior: Vec<PosteriorRow>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ExperimentReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
        self.posterior.extend(other.posterior);
        self.metadata.extend(other.metadata);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
    Md,
}

impl ReportFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn posterior_to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(POSTERIOR_COLUMNS)?;
    for row in &report.posterior {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn to_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

/// `2.2 × 10^5`, truncated to two significant figures.
pub fn sci2(x: f64) -> String {
    match sig2_truncated(x) {
        Some((tenths, exp)) => format!("{}.{} × 10^{}", tenths / 10, tenths % 10, exp),
        None => "0".into(),
    }
}

fn fmt_float(x: Option<f64>, diverged: bool) -> String {
    match x {
        Some(v) => format!("{v:.1e}"),
        None if diverged => "NaN".into(),
        None => "".into(),
    }
}

fn grid(
    out: &mut String,
    title: &str,
    corner: &str,
    col_label: &str,
    rows: &[(String, BTreeMap<usize, String>)],
) {
    let cols: BTreeSet<usize> = rows.iter().flat_map(|(_, c)| c.keys().copied()).collect();
    let _ = writeln!(out, "### {title}\n");
    let _ = write!(out, "| {corner} |");
    for c in &cols {
        let _ = write!(out, " {col_label}={c} |");
    }
    let _ = write!(out, "\n|---|");
    for _ in &cols {
        let _ = write!(out, "---|");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "| {label} |");
        for c in &cols {
            let _ = write!(out, " {} |", cells.get(c).map(String::as_str).unwrap_or(""));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn method_order(m: &str) -> usize {
    match m.parse::<Method>() {
        Ok(Method::ViaRts) => 0,
        Ok(Method::ViaFilter) => 1,
        Ok(Method::Fps) => 2,
        Err(_) => 3,
    }
}

fn pivot<'a>(
    rows: impl Iterator<Item = &'a ReportRow>,
    label: impl Fn(&ReportRow) -> String,
    col: impl Fn(&ReportRow) -> usize,
    cell: impl Fn(&ReportRow) -> Option<String>,
) -> Vec<(String, BTreeMap<usize, String>)> {
    let mut out: Vec<(String, BTreeMap<usize, String>)> = Vec::new();
    for r in rows {
        let Some(v) = cell(r) else { continue };
        let l = label(r);
        match out.iter_mut().find(|(k, _)| *k == l) {
            Some((_, cells)) => {
                cells.insert(col(r), v);
            }
            None => out.push((l, BTreeMap::from([(col(r), v)]))),
        }
    }
    out
}

/// Markdown grids: memory and runtime by method and `d`, BVP deviation by
/// representation and `K`, EM evidence by iteration.
pub fn to_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let mut bench: Vec<&ReportRow> = report.rows.iter().filter(|r| r.experiment == "bench").collect();
    bench.sort_by_key(|r| method_order(&r.method));
    if bench.iter().any(|r| r.memory_bytes.is_some()) {
        let rows = pivot(
            bench.iter().copied(),
            |r| r.method.clone(),
            |r| r.d,
            |r| r.memory_bytes.map(|b| sci2(b as f64)),
        );
        grid(
            &mut out,
            "Memory in bytes (32-bit accounting)",
            "method",
            "d",
            &rows,
        );
    }
    if bench.iter().any(|r| r.wall_time_s.is_some() || r.diverged) {
        let rows = pivot(
            bench.iter().copied(),
            |r| r.method.clone(),
            |r| r.d,
            |r| (r.wall_time_s.is_some() || r.diverged).then(|| fmt_float(r.wall_time_s, r.diverged)),
        );
        grid(
            &mut out,
            "Runtime in seconds (best of repeats)",
            "method",
            "d",
            &rows,
        );
    }
    let bvp: Vec<&ReportRow> = report.rows.iter().filter(|r| r.experiment == "bvp").collect();
    if !bvp.is_empty() {
        let rows = pivot(
            bvp.iter().copied(),
            |r| r.rep.map(|p| p.to_string()).unwrap_or_default(),
            |r| r.steps,
            |r| Some(fmt_float(r.deviation_rmse, r.diverged)),
        );
        grid(
            &mut out,
            "Deviation of the initial mean from the reference (RMSE)",
            "rep",
            "K",
            &rows,
        );
    }
    let em: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| r.experiment == "track-em")
        .collect();
    if !em.is_empty() {
        out.push_str("### Evidence per EM iteration\n\n| iteration | log-likelihood | deviation from truth |\n|---|---|---|\n");
        for r in &em {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                r.method,
                r.loglik
                    .map(|l| format!("{l:.6}"))
                    .unwrap_or_else(|| "NaN".into()),
                fmt_float(r.deviation_rmse, r.diverged)
            );
        }
        out.push('\n');
    }
    if !report.posterior.is_empty() {
        out.push_str("### Posterior of the initial state\n\n| iteration | component | mean | stddev |\n|---|---|---|---|\n");
        for p in &report.posterior {
            let _ = writeln!(
                out,
                "| {} | {} | {:.6} | {:.6} |",
                p.iteration, p.component, p.mean, p.stddev
            );
        }
        out.push('\n');
    }
    if !report.metadata.is_empty() {
        out.push_str("### Notes\n\n");
        for (k, v) in &report.metadata {
            let _ = writeln!(out, "- {k}: {v}");
        }
    }
    out
}

pub fn render(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
        ReportFormat::Md => Ok(to_markdown(report)),
    }
}

/// Sibling path holding the posterior rows of a CSV report.
pub fn posterior_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}.posterior.csv"))
}

/// Writes `report` to `path`. CSV output puts posterior rows, if any, in
/// a second file next to it; the other formats keep everything together.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = render(report, format)?;
    fs::write(path, text).with_context(|| format!("writing report to {}", path.display()))?;
    if format == ReportFormat::Csv && !report.posterior.is_empty() {
        let p = posterior_path(path);
        fs::write(&p, posterior_to_csv(report)?)
            .with_context(|| format!("writing report to {}", p.display()))?;
    }
    Ok(())
}
