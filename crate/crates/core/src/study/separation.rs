use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::evaluate_dataset;
use super::{StudyGrid, StudyOptions, StudyReport, Task};
use crate::error::{Error, Result};
use crate::measures::semantics_for;
use crate::types::{CaseRecord, ModelFamily, UncertaintyType};

/// Scenario whose rater ambiguity is scored by NCC.
pub const SEPARATION_NCC_SCENARIO: &str = "S1";
/// Scenarios whose shifted test cases are scored by AUROC.
pub const SEPARATION_AUROC_SCENARIOS: [&str; 3] = ["S2", "S3A", "S3B"];

/// Published toy-data NCC for test-time dropout, `(EE, MI)`. Only the
/// ordering is used as a target; the synthetic models do not reproduce the
/// absolute values.
pub const TOY_TTD_NCC_REFERENCE: (f64, f64) = (0.86, 0.47);

/// Runs NCC on `S1` and i.i.d.-vs-OoD AUROC on every available shift
/// scenario. `datasets` maps scenario names to their cases; test cases are
/// evaluated, validation (or leading training) cases fit thresholds.
pub fn run_separation_study(
    datasets: &BTreeMap<String, Vec<CaseRecord>>,
    grid: &StudyGrid,
    opts: &StudyOptions,
) -> Result<StudyReport> {
    let s1 = datasets
        .get(SEPARATION_NCC_SCENARIO)
        .ok_or_else(|| Error::MissingScenario(format!("{SEPARATION_NCC_SCENARIO} is required for the NCC questions")))?;
    let shifted: Vec<&str> = SEPARATION_AUROC_SCENARIOS.iter().copied().filter(|s| datasets.contains_key(*s)).collect();
    if shifted.is_empty() {
        return Err(Error::MissingScenario(format!(
            "one of {} is required for the AUROC questions",
            SEPARATION_AUROC_SCENARIOS.join(", ")
        )));
    }
    let mut report = StudyReport::default();
    let (rows, notes) = evaluate_dataset(SEPARATION_NCC_SCENARIO, s1, grid, opts, &[Task::SepNcc])?;
    report.rows.extend(rows);
    report.notes.extend(notes);
    for name in shifted {
        let (rows, notes) = evaluate_dataset(name, &datasets[name], grid, opts, &[Task::SepAuroc])?;
        report.rows.extend(rows);
        report.notes.extend(notes);
    }
    report.canonicalize();
    report.validate()?;
    Ok(report)
}

/// Whether a family's aleatoric-claimed measure beats its epistemic-claimed
/// one on NCC (rater ambiguity), or the reverse on AUROC (shift detection),
/// for one scenario and seed. Values average over aggregations for AUROC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub scenario: String,
    pub family: ModelFamily,
    pub task: Task,
    pub seed: u64,
    pub au_value: f64,
    pub eu_value: f64,
    pub holds: bool,
}

/// Direction checks for every family that exposes both an aleatoric and an
/// epistemic measure.
pub fn direction_checks(report: &StudyReport) -> Vec<DirectionCheck> {
    let mut groups: BTreeMap<(String, ModelFamily, Task, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &report.rows {
        if !matches!(r.task, Task::SepNcc | Task::SepAuroc) {
            continue;
        }
        let sem = semantics_for(r.family);
        if sem.measure_for(UncertaintyType::Au).is_none() || sem.measure_for(UncertaintyType::Eu).is_none() {
            continue;
        }
        let e = groups.entry((r.scenario.clone(), r.family, r.task, r.seed)).or_default();
        match r.claimed_type {
            Some(UncertaintyType::Au) => e.0.push(r.value),
            Some(UncertaintyType::Eu) => e.1.push(r.value),
            _ => {}
        }
    }
    groups
        .into_iter()
        .filter(|(_, (au, eu))| !au.is_empty() && !eu.is_empty())
        .map(|((scenario, family, task, seed), (au, eu))| {
            let au_value = au.iter().sum::<f64>() / au.len() as f64;
            let eu_value = eu.iter().sum::<f64>() / eu.len() as f64;
            let holds = if task == Task::SepNcc { au_value > eu_value } else { eu_value > au_value };
            DirectionCheck { scenario, family, task, seed, au_value, eu_value, holds }
        })
        .collect()
}
