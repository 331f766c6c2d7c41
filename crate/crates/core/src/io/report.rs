//! Report rendering: CSV tables with fixed column order and 6 significant
//! digits, a JSON document, and normalized heatmap arrays.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy;
use crate::aggregation::Strategy;
use crate::error::{Error, Result};
use crate::study::{
    component_improvement_aggregate, Component, ComponentImprovement, DirectionCheck, ReportRow, StudyReport, SummaryRow,
    Task,
};
use crate::types::{Measure, ModelFamily, Split, UncertaintyMap, UncertaintyType};

pub const REPORT_COLUMNS: [&str; 9] =
    ["scenario", "family", "measure", "claimed_type", "aggregation", "task", "split", "seed", "value"];

/// Display upper bound for the deterministic model's heatmaps.
pub const HEATMAP_BOUND_DETERMINISTIC: f64 = 0.5;
/// Display upper bound for sampling models' heatmaps.
pub const HEATMAP_BOUND_SAMPLING: f64 = 0.7;

/// `printf("%g")` formatting: 6 significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mantissa), exp.abs())
    } else {
        strip(&format!("{x:.*}", (5 - exp) as usize))
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("CSV: {e}"))
}

fn write_table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// Rows in canonical order regardless of input order.
pub fn report_to_csv(report: &StudyReport) -> Result<String> {
    let mut r = report.clone();
    r.canonicalize();
    write_table(
        &REPORT_COLUMNS,
        r.rows.iter().map(|row| {
            vec![
                row.scenario.clone(),
                row.family.to_string(),
                opt(row.measure),
                opt(row.claimed_type),
                opt(row.aggregation),
                row.task.to_string(),
                opt(row.split),
                row.seed.to_string(),
                format_g6(row.value),
            ]
        }),
    )
}

pub fn report_from_csv(text: &str) -> Result<StudyReport> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Parse(format!("unexpected report columns {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ReportRow {
            scenario: f(0).to_string(),
            family: f(1).parse::<ModelFamily>()?,
            measure: parse_opt::<Measure>(f(2))?,
            claimed_type: parse_opt::<UncertaintyType>(f(3))?,
            aggregation: parse_opt::<Strategy>(f(4))?,
            task: f(5).parse::<Task>()?,
            split: parse_opt::<Split>(f(6))?,
            seed: f(7).parse().map_err(|_| Error::Parse(format!("bad seed '{}'", f(7))))?,
            value: f(8).parse().map_err(|_| Error::Parse(format!("bad value '{}'", f(8))))?,
        });
    }
    let mut report = StudyReport { rows, notes: Vec::new() };
    report.canonicalize();
    Ok(report)
}

pub fn summary_to_csv(summary: &[SummaryRow]) -> Result<String> {
    write_table(
        &["scenario", "family", "measure", "claimed_type", "aggregation", "task", "split", "mean", "sd", "seeds"],
        summary.iter().map(|s| {
            let (scenario, family, measure, claimed, aggregation, task, split) = &s.cell;
            vec![
                scenario.clone(),
                family.to_string(),
                opt(*measure),
                opt(*claimed),
                opt(*aggregation),
                task.to_string(),
                opt(*split),
                format_g6(s.mean),
                format_g6(s.sd),
                s.seeds.to_string(),
            ]
        }),
    )
}

pub fn directions_to_csv(checks: &[DirectionCheck]) -> Result<String> {
    write_table(
        &["scenario", "family", "task", "seed", "au_value", "eu_value", "holds"],
        checks.iter().map(|c| {
            vec![
                c.scenario.clone(),
                c.family.to_string(),
                c.task.to_string(),
                c.seed.to_string(),
                format_g6(c.au_value),
                format_g6(c.eu_value),
                c.holds.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    pub task: Task,
    pub component: Component,
    pub values: Vec<ComponentImprovement>,
}

/// Component improvements for every task/component pair the report covers;
/// pairs without that dimension are skipped.
pub fn component_tables(report: &StudyReport) -> Vec<ComponentTable> {
    let mut tasks: Vec<Task> = report.rows.iter().map(|r| r.task).collect();
    tasks.sort();
    tasks.dedup();
    let mut out = Vec::new();
    for task in tasks {
        for &component in Component::ALL {
            if let Ok(values) = component_improvement_aggregate(report, component, task) {
                out.push(ComponentTable { task, component, values });
            }
        }
    }
    out
}

pub fn components_to_csv(tables: &[ComponentTable]) -> Result<String> {
    write_table(
        &["task", "component", "value", "improvement", "sd", "cells"],
        tables.iter().flat_map(|t| {
            t.values.iter().map(move |v| {
                vec![
                    t.task.to_string(),
                    t.component.to_string(),
                    v.value.clone(),
                    format_g6(v.improvement),
                    format_g6(v.sd),
                    v.cells.to_string(),
                ]
            })
        }),
    )
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    rows: &'a [ReportRow],
    notes: &'a [String],
    summary: Vec<SummaryRow>,
}

pub fn report_to_json(report: &StudyReport) -> String {
    let mut r = report.clone();
    r.canonicalize();
    let doc = ReportDocument { rows: &r.rows, notes: &r.notes, summary: r.summary() };
    serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
}

pub fn report_from_json(text: &str) -> Result<StudyReport> {
    #[derive(Deserialize)]
    struct Doc {
        rows: Vec<ReportRow>,
        #[serde(default)]
        notes: Vec<String>,
    }
    let d: Doc = serde_json::from_str(text).map_err(|e| Error::Parse(format!("report JSON: {e}")))?;
    let mut r = StudyReport { rows: d.rows, notes: d.notes };
    r.canonicalize();
    r.validate()?;
    Ok(r)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files written by [`render_report`].
pub const REPORT_FILES: [&str; 4] = ["report.csv", "summary.csv", "components.csv", "report.json"];

/// Writes report, summary and component tables (plus notes) into `dir`.
pub fn render_report(report: &StudyReport, dir: &Path) -> Result<()> {
    report.validate()?;
    write_text(&dir.join("report.csv"), &report_to_csv(report)?)?;
    write_text(&dir.join("summary.csv"), &summary_to_csv(&report.summary())?)?;
    write_text(&dir.join("components.csv"), &components_to_csv(&component_tables(report))?)?;
    write_text(&dir.join("report.json"), &report_to_json(report))?;
    let mut notes = report.notes.clone();
    notes.sort();
    write_text(&dir.join("notes.txt"), &notes.iter().map(|n| format!("{n}\n")).collect::<String>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub case_id: String,
    pub family: ModelFamily,
    pub measure: Measure,
    pub claimed_type: UncertaintyType,
    pub shape: Vec<usize>,
    /// Values were divided by this bound and clipped to `[0, 1]`.
    pub normalization_upper: f64,
}

pub fn heatmap_bound(family: ModelFamily) -> f64 {
    if family == ModelFamily::Deterministic {
        HEATMAP_BOUND_DETERMINISTIC
    } else {
        HEATMAP_BOUND_SAMPLING
    }
}

pub fn normalize_heatmap(map: &UncertaintyMap, family: ModelFamily) -> Vec<f64> {
    let bound = heatmap_bound(family);
    map.data.iter().map(|&u| (u / bound).clamp(0.0, 1.0)).collect()
}

/// Writes `<stem>.npy` (normalized map) and `<stem>.json` (metadata).
pub fn export_heatmap(dir: &Path, stem: &str, case_id: &str, family: ModelFamily, map: &UncertaintyMap) -> Result<HeatmapMeta> {
    let meta = HeatmapMeta {
        case_id: case_id.to_string(),
        family,
        measure: map.measure,
        claimed_type: map.claimed_type,
        shape: map.shape.dims().to_vec(),
        normalization_upper: heatmap_bound(family),
    };
    npy::write_f64(dir.join(format!("{stem}.npy")), map.shape.dims(), &normalize_heatmap(map, family))?;
    write_text(&dir.join(format!("{stem}.json")), &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"))?;
    Ok(meta)
}

/// Creates a fresh `run-<UTC timestamp>` directory under `root`, adding a
/// numeric suffix if the name is taken. Existing runs are never touched.
pub fn create_run_dir(root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("run-%Y%m%dT%H%M%SZ").to_string();
    for k in 0.. {
        let name = if k == 0 { stamp.clone() } else { format!("{stamp}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}
