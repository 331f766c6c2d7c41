use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CellKey, ReportRow, StudyReport, Task};
use crate::error::{Error, Result};
use crate::types::string_enum;

string_enum!(
    Component {
        Family => "FAMILY",
        MeasureType => "MEASURE_TYPE",
        Aggregation => "AGGREGATION",
    }
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentImprovement {
    pub value: String,
    /// Mean over this value's cells minus the mean over all cells, oriented
    /// so that positive is better.
    pub improvement: f64,
    /// Population sd over this value's cells.
    pub sd: f64,
    pub cells: usize,
}

fn component_value(row: &ReportRow, component: Component) -> Option<String> {
    match component {
        Component::Family => Some(row.family.to_string()),
        Component::MeasureType => row.claimed_type.map(|t| t.to_string()),
        Component::Aggregation => row.aggregation.map(|a| a.to_string()),
    }
}

/// Isolates one component's effect on a task. Seeds are averaged within
/// each cell; every remaining dimension is flattened, so a value's
/// improvement is the mean of its cells minus the grand mean and its sd is
/// taken over those cells. Measure types unsuited to the task are dropped
/// first.
pub fn component_improvement_aggregate(
    report: &StudyReport,
    component: Component,
    task: Task,
) -> Result<Vec<ComponentImprovement>> {
    let sign = if task.higher_is_better() { 1.0 } else { -1.0 };
    let rows: Vec<&ReportRow> = report.rows_for(task).filter(|r| !task.excludes(r.claimed_type)).collect();
    if rows.is_empty() {
        return Err(Error::IncompleteGrid(format!("no {task} rows")));
    }
    let all_seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut cells: BTreeMap<CellKey, (String, BTreeSet<u64>, f64)> = BTreeMap::new();
    for r in &rows {
        let value = component_value(r, component)
            .ok_or_else(|| Error::IncompleteGrid(format!("{task} rows have no {component} dimension")))?;
        let e = cells.entry(r.cell()).or_insert_with(|| (value, BTreeSet::new(), 0.0));
        if !e.1.insert(r.seed) {
            return Err(Error::IncompleteGrid(format!("duplicate seed {} in cell {:?}", r.seed, r.cell())));
        }
        e.2 += r.value;
    }
    let mut by_value: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (key, (value, seeds, sum)) in cells {
        if seeds != all_seeds {
            return Err(Error::IncompleteGrid(format!("cell {key:?} covers {} of {} seeds", seeds.len(), all_seeds.len())));
        }
        by_value.entry(value).or_default().push(sign * sum / seeds.len() as f64);
    }
    let n: usize = by_value.values().map(Vec::len).sum();
    let grand = by_value.values().flatten().sum::<f64>() / n as f64;
    Ok(by_value
        .into_iter()
        .map(|(value, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            ComponentImprovement { value, improvement: m - grand, sd, cells: v.len() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Strategy;
    use crate::types::{Measure, ModelFamily, Split, UncertaintyType};

    fn grid(task: Task, bump: f64) -> StudyReport {
        let mut rows = Vec::new();
        for family in [ModelFamily::Ttd, ModelFamily::Ensemble] {
            for aggregation in [Strategy::ImageSum, Strategy::PatchMax] {
                for seed in 0..2 {
                    let bumped = family == ModelFamily::Ttd && aggregation == Strategy::ImageSum;
                    rows.push(ReportRow {
                        scenario: "S".into(),
                        family,
                        measure: Some(Measure::Mi),
                        claimed_type: Some(UncertaintyType::Eu),
                        aggregation: Some(aggregation),
                        task,
                        split: Some(Split::Iid),
                        seed,
                        value: 0.5 + if bumped { bump } else { 0.0 },
                    });
                }
            }
        }
        StudyReport { rows, notes: vec![] }
    }

    #[test]
    fn constant_grid_has_no_improvement() {
        let imp = component_improvement_aggregate(&grid(Task::OodAuroc, 0.0), Component::Family, Task::OodAuroc).unwrap();
        assert!(imp.iter().all(|c| c.improvement == 0.0 && c.sd == 0.0));
    }

    #[test]
    fn single_bump_by_hand() {
        // 4 cells, one raised by d: grand mean rises d/4; TTD's two cells
        // average d/2, so TTD gains d/4 and ENSEMBLE loses d/4
        let d = 0.2;
        let imp = component_improvement_aggregate(&grid(Task::OodAuroc, d), Component::Family, Task::OodAuroc).unwrap();
        let ttd = imp.iter().find(|c| c.value == "TTD").unwrap();
        let ens = imp.iter().find(|c| c.value == "ENSEMBLE").unwrap();
        assert!((ttd.improvement - d / 4.0).abs() < 1e-15);
        assert!((ens.improvement + d / 4.0).abs() < 1e-15);
        assert!((ttd.sd - d / 2.0).abs() < 1e-15);
        // lower-is-better flips the sign
        let imp = component_improvement_aggregate(&grid(Task::FdAurc, d), Component::Family, Task::FdAurc).unwrap();
        assert!((imp.iter().find(|c| c.value == "TTD").unwrap().improvement + d / 4.0).abs() < 1e-15);
    }

    #[test]
    fn missing_seed_is_incomplete() {
        let mut r = grid(Task::OodAuroc, 0.0);
        r.rows.pop();
        let err = component_improvement_aggregate(&r, Component::Aggregation, Task::OodAuroc).unwrap_err();
        assert_eq!(err.code(), "INCOMPLETE_GRID");
    }

    #[test]
    fn au_rows_excluded_from_shift_detection() {
        let mut r = grid(Task::OodAuroc, 0.0);
        for row in &mut r.rows {
            row.claimed_type = Some(UncertaintyType::Au);
        }
        assert_eq!(
            component_improvement_aggregate(&r, Component::Family, Task::OodAuroc).unwrap_err().code(),
            "INCOMPLETE_GRID"
        );
    }
}
