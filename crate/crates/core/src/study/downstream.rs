use super::engine::evaluate_dataset;
use super::{StudyGrid, StudyOptions, StudyReport, Task};
use crate::error::{Error, Result};
use crate::types::{CaseRecord, Role, Split};

pub const DOWNSTREAM_TASKS: [Task; 8] = [
    Task::OodAuroc,
    Task::FdAurc,
    Task::FdEaurc,
    Task::AlOodFraction,
    Task::CalibAce,
    Task::AmNcc,
    Task::AmGed,
    Task::Dice,
];

fn require(cases: &[CaseRecord], role: Role, split: Option<Split>, what: &str) -> Result<()> {
    if cases.iter().any(|c| c.role == role && split.is_none_or(|s| c.split == s)) {
        Ok(())
    } else {
        Err(Error::MissingSplit(format!("downstream evaluation needs {what}")))
    }
}

/// Shift detection, failure detection, active-learning queries, calibration
/// and ambiguity modeling on one data set. Calibration and ambiguity are
/// pixel-level and carry no aggregation.
pub fn run_downstream_eval(scenario: &str, cases: &[CaseRecord], grid: &StudyGrid, opts: &StudyOptions) -> Result<StudyReport> {
    require(cases, Role::Test, Some(Split::Iid), "i.i.d. TEST cases")?;
    require(cases, Role::Test, Some(Split::Ood), "OoD TEST cases")?;
    require(cases, Role::Pool, None, "POOL cases")?;
    require(cases, Role::Val, None, "VAL cases for threshold and Platt fitting")?;
    if !cases.iter().any(|c| c.role == Role::Test && c.split == Split::Iid && c.raters.raters() >= 2) {
        return Err(Error::MissingSplit(
            "ambiguity modeling needs i.i.d. TEST cases with at least two raters".into(),
        ));
    }
    let (rows, notes) = evaluate_dataset(scenario, cases, grid, opts, &DOWNSTREAM_TASKS)?;
    let mut report = StudyReport { rows, notes };
    report.canonicalize();
    report.validate()?;
    Ok(report)
}

/// Tasks whose inputs are present in `cases`.
pub fn applicable_tasks(cases: &[CaseRecord]) -> Vec<Task> {
    let has = |role: Role, split: Split| cases.iter().any(|c| c.role == role && c.split == split);
    let mut tasks = Vec::new();
    if has(Role::Test, Split::Iid) && has(Role::Test, Split::Ood) {
        tasks.push(Task::OodAuroc);
    }
    if cases.iter().any(|c| c.role == Role::Test) {
        tasks.extend([Task::FdAurc, Task::FdEaurc, Task::Dice]);
    }
    if cases.iter().any(|c| c.role == Role::Pool) {
        tasks.push(Task::AlOodFraction);
    }
    if has(Role::Test, Split::Iid) {
        tasks.push(Task::CalibAce);
        if cases.iter().any(|c| c.role == Role::Test && c.split == Split::Iid && c.raters.raters() >= 2) {
            tasks.extend([Task::AmNcc, Task::AmGed]);
        }
    }
    tasks.sort();
    tasks
}

/// Evaluates an arbitrary task subset; tasks lacking inputs produce notes
/// rather than rows.
pub fn evaluate_cases(
    scenario: &str,
    cases: &[CaseRecord],
    grid: &StudyGrid,
    opts: &StudyOptions,
    tasks: &[Task],
) -> Result<StudyReport> {
    let tasks: Vec<Task> = tasks
        .iter()
        .copied()
        .filter(|t| *t != Task::AlOodFraction || cases.iter().any(|c| c.role == Role::Pool))
        .collect();
    let (rows, notes) = evaluate_dataset(scenario, cases, grid, opts, &tasks)?;
    let mut report = StudyReport { rows, notes };
    report.canonicalize();
    report.validate()?;
    Ok(report)
}
