//! Study harness: every (model family, measure, aggregation) combination is
//! evaluated on the separation questions and on the downstream tasks, and
//! component effects are isolated by averaging over the remaining grid.

mod components;
mod downstream;
mod engine;
mod separation;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationSpec, Strategy};
use crate::error::{Error, Result};
use crate::metrics::{GedOptions, DEFAULT_ACE_BINS, PLATT_MAX_PIXELS};
use crate::simulate::SimulatorConfig;
use crate::types::{string_enum, Measure, ModelFamily, Split, UncertaintyType};

pub use components::{component_improvement_aggregate, Component, ComponentImprovement};
pub use downstream::{applicable_tasks, evaluate_cases, run_downstream_eval, DOWNSTREAM_TASKS};
pub use sweep::{size_sweep, SizeSweep, SweepOptions, SweepPoint};
pub use separation::{
    direction_checks, run_separation_study, DirectionCheck, SEPARATION_AUROC_SCENARIOS, SEPARATION_NCC_SCENARIO,
    TOY_TTD_NCC_REFERENCE,
};

string_enum!(
    Task {
        SepNcc => "SEP_NCC",
        SepAuroc => "SEP_AUROC",
        OodAuroc => "OOD_AUROC",
        FdAurc => "FD_AURC",
        FdEaurc => "FD_EAURC",
        AlOodFraction => "AL_OOD_FRACTION",
        CalibAce => "CALIB_ACE",
        AmNcc => "AM_NCC",
        AmGed => "AM_GED",
        Dice => "DICE",
    }
);

impl Task {
    /// Metric orientation used when comparing or aggregating rows.
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, Task::FdAurc | Task::FdEaurc | Task::CalibAce | Task::AmGed)
    }

    /// Measure types that are not meant for the task and are left out of
    /// component averages: aleatoric measures for shift detection and for
    /// active-learning queries.
    pub fn excludes(&self, claimed: Option<UncertaintyType>) -> bool {
        matches!((self, claimed), (Task::OodAuroc | Task::AlOodFraction, Some(UncertaintyType::Au)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub family: ModelFamily,
    pub measure: Option<Measure>,
    pub claimed_type: Option<UncertaintyType>,
    pub aggregation: Option<Strategy>,
    pub task: Task,
    pub split: Option<Split>,
    pub seed: u64,
    pub value: f64,
}

/// Everything that identifies a row except its seed and value.
pub type CellKey = (String, ModelFamily, Option<Measure>, Option<UncertaintyType>, Option<Strategy>, Task, Option<Split>);

impl ReportRow {
    pub fn cell(&self) -> CellKey {
        (
            self.scenario.clone(),
            self.family,
            self.measure,
            self.claimed_type,
            self.aggregation,
            self.task,
            self.split,
        )
    }

    fn sort_key(&self) -> (CellKey, u64) {
        (self.cell(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: CellKey,
    pub mean: f64,
    /// Population sd over seeds.
    pub sd: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
    /// Skipped cases and other caveats, one line each.
    pub notes: Vec<String>,
}

impl StudyReport {
    /// Sorts rows by cell then seed and notes lexicographically, so output
    /// does not depend on evaluation order.
    pub fn canonicalize(&mut self) {
        self.rows.sort_by_key(ReportRow::sort_key);
        self.notes.sort();
        self.notes.dedup();
    }

    pub fn merge(&mut self, other: StudyReport) {
        self.rows.extend(other.rows);
        self.notes.extend(other.notes);
        self.canonicalize();
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rows.iter().find(|r| !r.value.is_finite()) {
            return Err(Error::InternalConsistency(format!("non-finite value in row {:?}", r.cell())));
        }
        Ok(())
    }

    /// Mean and sd over seeds for every cell, in canonical order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: std::collections::BTreeMap<CellKey, Vec<f64>> = Default::default();
        for r in &self.rows {
            groups.entry(r.cell()).or_default().push(r.value);
        }
        groups
            .into_iter()
            .map(|(cell, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                SummaryRow { cell, mean, sd, seeds: v.len() }
            })
            .collect()
    }

    pub fn rows_for(&self, task: Task) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.task == task)
    }
}

/// The combinations to evaluate. Measures follow from each family's
/// semantics. A threshold-mean aggregation without a fixed threshold gets
/// one fitted on calibration cases per family, seed and measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyGrid {
    pub families: Vec<ModelFamily>,
    pub aggregations: Vec<AggregationSpec>,
    pub seeds: Vec<u64>,
    /// Simulator settings per family; families without an entry use
    /// [`SimulatorConfig::for_family`]. The seed field is replaced per run.
    pub simulators: Vec<SimulatorConfig>,
}

impl Default for StudyGrid {
    fn default() -> Self {
        StudyGrid {
            families: ModelFamily::ALL.to_vec(),
            aggregations: Strategy::ALL.iter().map(|&s| AggregationSpec::new(s)).collect(),
            seeds: vec![0, 1, 2],
            simulators: Vec::new(),
        }
    }
}

impl StudyGrid {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.aggregations.is_empty() || self.seeds.is_empty() {
            return Err(Error::ConfigInvalid("study grid needs families, aggregations and seeds".into()));
        }
        for a in &self.aggregations {
            if a.strategy != Strategy::ThresholdMean || a.threshold.is_some() {
                a.validate()?;
            }
        }
        for s in &self.simulators {
            s.validate()?;
        }
        Ok(())
    }

    pub fn simulator(&self, family: ModelFamily, seed: u64) -> SimulatorConfig {
        let base = self
            .simulators
            .iter()
            .find(|s| s.family == family)
            .cloned()
            .unwrap_or_else(|| SimulatorConfig::for_family(family));
        SimulatorConfig { seed, ..base }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    pub n_bins: usize,
    pub ged: GedOptions,
    pub platt_max_pixels: usize,
    /// Training cases used for threshold and Platt fitting when the data
    /// set has no validation cases.
    pub calibration_fallback: usize,
    /// Replace failure-detection confidences by the negated true risk.
    pub oracle_fd_confidence: bool,
    pub positive_class: u8,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            n_bins: DEFAULT_ACE_BINS,
            ged: GedOptions::default(),
            platt_max_pixels: PLATT_MAX_PIXELS,
            calibration_fallback: 10,
            oracle_fd_confidence: false,
            positive_class: 1,
        }
    }
}

/// Picks the top half (rounded up) of a pool by score, ties broken by
/// ascending case id.
pub fn al_query_selection(pool_scores: &[(String, f64)]) -> Result<Vec<String>> {
    if pool_scores.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut order: Vec<&(String, f64)> = pool_scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k = pool_scores.len().div_ceil(2);
    Ok(order.into_iter().take(k).map(|(id, _)| id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(scores: &[f64]) -> Vec<(String, f64)> {
        scores.iter().enumerate().map(|(i, &s)| (format!("c{i}"), s)).collect()
    }

    #[test]
    fn query_selection() {
        assert_eq!(al_query_selection(&pool(&[4.0, 3.0, 2.0, 1.0])).unwrap(), vec!["c0", "c1"]);
        assert_eq!(al_query_selection(&pool(&[1.0; 4])).unwrap(), vec!["c0", "c1"]);
        assert_eq!(al_query_selection(&pool(&[1.0, 5.0, 2.0, 4.0, 3.0])).unwrap(), vec!["c1", "c3", "c4"]);
        assert_eq!(al_query_selection(&[]).unwrap_err().code(), "EMPTY_POOL");
    }

    #[test]
    fn orientation_and_exclusions() {
        assert!(Task::OodAuroc.higher_is_better());
        assert!(!Task::FdAurc.higher_is_better());
        assert!(!Task::CalibAce.higher_is_better());
        assert!(Task::OodAuroc.excludes(Some(UncertaintyType::Au)));
        assert!(!Task::OodAuroc.excludes(Some(UncertaintyType::Eu)));
        assert!(!Task::SepAuroc.excludes(Some(UncertaintyType::Au)));
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let row = |seed, task| ReportRow {
            scenario: "S1".into(),
            family: ModelFamily::Ttd,
            measure: Some(Measure::Pe),
            claimed_type: Some(UncertaintyType::Pu),
            aggregation: None,
            task,
            split: Some(Split::Iid),
            seed,
            value: seed as f64,
        };
        let mut a = StudyReport { rows: vec![row(1, Task::Dice), row(0, Task::AmNcc), row(0, Task::Dice)], notes: vec![] };
        let mut b = StudyReport { rows: vec![row(0, Task::Dice), row(1, Task::Dice), row(0, Task::AmNcc)], notes: vec![] };
        a.canonicalize();
        b.canonicalize();
        assert_eq!(a, b);
    }
}
