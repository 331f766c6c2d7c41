//! Per-cell evaluation shared by the separation study and the downstream
//! tasks. Calibration (thresholds, Platt) is fitted per (family, seed)
//! first; evaluation cases are then visited once each, so rater geometry is
//! computed once per case.

use std::borrow::Cow;

use crate::aggregation::{compute_threshold, AggregationSpec, Strategy};
use crate::error::{Error, Result};
use crate::measures::{family_maps, semantics_for};
use crate::metrics::{
    auroc, aurc, e_aurc, ged_with, mean_rater_dice, ncc, platt_scale_subsampled, rater_variance_map, AceAccumulator,
    PlattFit,
};
use crate::parallel;
use crate::rng;
use crate::simulate::{simulate_with_geometry, CaseGeometry, SimulatorConfig};
use crate::types::{mean_prediction, CaseRecord, Measure, ModelFamily, ProbabilityStack, Role, Split, UncertaintyMap};

use super::{al_query_selection, ReportRow, StudyGrid, StudyOptions, Task};

struct Cell {
    family: ModelFamily,
    seed: u64,
    sim: SimulatorConfig,
    measures: Vec<Measure>,
}

struct CellFit {
    /// Aggregations with any threshold resolved, per measure.
    aggregations: Vec<Vec<AggregationSpec>>,
    platt: Vec<Option<PlattFit>>,
}

/// Per-case results for one cell.
struct CaseSummary {
    split: Split,
    role: Role,
    case_id: String,
    /// `[measure][aggregation]`
    scores: Vec<Vec<f64>>,
    dice: f64,
    ncc: Vec<Option<f64>>,
    ged: Option<f64>,
    ace: Vec<Option<AceAccumulator>>,
}

fn predict<'a>(case: &'a CaseRecord, geom: Option<&CaseGeometry>, cfg: &SimulatorConfig) -> Result<Cow<'a, ProbabilityStack>> {
    match (&case.stack, geom) {
        (Some(stack), _) => Ok(Cow::Borrowed(stack)),
        (None, Some(g)) => Ok(Cow::Owned(simulate_with_geometry(g, &case.case_id, case.split, cfg)?)),
        (None, None) => Err(Error::InternalConsistency(format!("no prediction source for {}", case.case_id))),
    }
}

fn geometry(case: &CaseRecord) -> Option<CaseGeometry> {
    case.stack.is_none().then(|| CaseGeometry::new(&case.raters))
}

fn needs(tasks: &[Task], any: &[Task]) -> bool {
    tasks.iter().any(|t| any.contains(t))
}

const SCORE_TASKS: [Task; 5] = [Task::SepAuroc, Task::OodAuroc, Task::FdAurc, Task::FdEaurc, Task::AlOodFraction];

/// Per-pixel correctness of the mean prediction against the rater majority.
fn correctness(stack: &ProbabilityStack, case: &CaseRecord, pc: u8) -> Vec<bool> {
    let pred = mean_prediction(stack).labels;
    let majority = case.raters.majority(pc);
    pred.iter().zip(&majority).map(|(&p, &m)| (p == pc) == (m == 1)).collect()
}

fn fit_cell(cell: &Cell, calib: &[&CaseRecord], grid: &StudyGrid, opts: &StudyOptions, tasks: &[Task]) -> Result<CellFit> {
    let wants_threshold = needs(tasks, &SCORE_TASKS)
        && grid.aggregations.iter().any(|a| a.strategy == Strategy::ThresholdMean && a.threshold.is_none());
    let wants_platt = tasks.contains(&Task::CalibAce);
    let nm = cell.measures.len();
    let mut maps: Vec<Vec<UncertaintyMap>> = vec![Vec::new(); nm];
    let mut masks: Vec<Vec<u8>> = Vec::new();
    let mut platt_scores: Vec<Vec<f64>> = vec![Vec::new(); nm];
    let mut platt_correct: Vec<bool> = Vec::new();
    if wants_threshold || wants_platt {
        if calib.is_empty() {
            return Err(Error::EmptyValidation);
        }
        for case in calib {
            let g = geometry(case);
            let stack = predict(case, g.as_ref(), &cell.sim)?;
            let case_maps = family_maps(&stack, cell.family)?;
            if wants_platt {
                platt_correct.extend(correctness(&stack, case, opts.positive_class));
                for (k, m) in case_maps.iter().enumerate() {
                    platt_scores[k].extend_from_slice(&m.data);
                }
            }
            if wants_threshold {
                masks.push(mean_prediction(&stack).labels);
                for (k, m) in case_maps.into_iter().enumerate() {
                    maps[k].push(m);
                }
            }
        }
    }
    let mut aggregations = Vec::with_capacity(nm);
    for k in 0..nm {
        let mut specs = Vec::new();
        for a in &grid.aggregations {
            let mut spec = a.clone();
            if spec.strategy == Strategy::ThresholdMean && spec.threshold.is_none() && wants_threshold {
                let refs: Vec<&UncertaintyMap> = maps[k].iter().collect();
                let mrefs: Vec<&[u8]> = masks.iter().map(|m| m.as_slice()).collect();
                spec.threshold = Some(compute_threshold(&refs, &mrefs)?.threshold);
            }
            specs.push(spec);
        }
        aggregations.push(specs);
    }
    let mut platt = vec![None; nm];
    if wants_platt {
        for k in 0..nm {
            let seed = rng::derive_seed(cell.seed, "platt-subsample", k as u64);
            platt[k] = Some(platt_scale_subsampled(&platt_scores[k], &platt_correct, opts.platt_max_pixels, seed)?);
        }
    }
    Ok(CellFit { aggregations, platt })
}

fn summarize_case(
    case: &CaseRecord,
    geom: Option<&CaseGeometry>,
    cell: &Cell,
    fit: &CellFit,
    opts: &StudyOptions,
    tasks: &[Task],
) -> Result<CaseSummary> {
    let pc = opts.positive_class;
    let stack = predict(case, geom, &cell.sim)?;
    let maps = family_maps(&stack, cell.family)?;
    let is_iid_test = case.role == Role::Test && case.split == Split::Iid;

    let scores = if needs(tasks, &SCORE_TASKS) {
        maps.iter()
            .zip(&fit.aggregations)
            .map(|(m, specs)| specs.iter().map(|s| s.apply(m)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let dice = mean_rater_dice(&stack, &case.raters, pc)?;

    let mut ncc_values = vec![None; maps.len()];
    if is_iid_test && needs(tasks, &[Task::SepNcc, Task::AmNcc]) && case.raters.raters() >= 2 {
        let var = rater_variance_map(&case.raters, pc)?;
        for (k, m) in maps.iter().enumerate() {
            let c = ncc(&m.data, &var.data)?;
            if !c.zero_variance {
                ncc_values[k] = Some(c.value);
            }
        }
    }

    let ged = if is_iid_test && tasks.contains(&Task::AmGed) {
        let preds: Vec<Vec<u8>> = (0..stack.samples()).map(|s| stack.sample_argmax(s)).collect();
        let p: Vec<&[u8]> = preds.iter().map(|m| m.as_slice()).collect();
        let r: Vec<&[u8]> = case.raters.masks().iter().map(|m| m.as_slice()).collect();
        let mut g = opts.ged;
        g.seed = rng::derive_seed(cell.seed, &format!("ged/{}", case.case_id), 0);
        Some(ged_with(&p, &r, pc, &g)?.value)
    } else {
        None
    };

    let mut ace = vec![None; maps.len()];
    if is_iid_test && tasks.contains(&Task::CalibAce) {
        let correct = correctness(&stack, case, pc);
        for (k, m) in maps.iter().enumerate() {
            let fit = fit.platt[k].as_ref().expect("platt fitted for calibration runs");
            let mut acc = AceAccumulator::new(opts.n_bins)?;
            for (&u, &ok) in m.data.iter().zip(&correct) {
                acc.push(fit.apply(u), ok)?;
            }
            ace[k] = Some(acc);
        }
    }

    Ok(CaseSummary {
        split: case.split,
        role: case.role,
        case_id: case.case_id.clone(),
        scores,
        dice,
        ncc: ncc_values,
        ged,
        ace,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates `tasks` on one data set for every (family, seed) of the grid.
pub(crate) fn evaluate_dataset(
    scenario: &str,
    cases: &[CaseRecord],
    grid: &StudyGrid,
    opts: &StudyOptions,
    tasks: &[Task],
) -> Result<(Vec<ReportRow>, Vec<String>)> {
    grid.validate()?;
    let mut notes = Vec::new();
    let mut calib: Vec<&CaseRecord> = cases.iter().filter(|c| c.role == Role::Val).collect();
    if calib.is_empty() {
        calib = cases.iter().filter(|c| c.role == Role::Train).take(opts.calibration_fallback).collect();
        if !calib.is_empty() {
            notes.push(format!(
                "{scenario}: no validation cases; fitted thresholds/Platt on the first {} training cases",
                calib.len()
            ));
        }
    }
    let eval: Vec<&CaseRecord> = cases.iter().filter(|c| matches!(c.role, Role::Test | Role::Pool)).collect();

    let cells: Vec<Cell> = grid
        .families
        .iter()
        .flat_map(|&family| {
            grid.seeds.iter().map(move |&seed| {
                let measures = semantics_for(family).mapping.iter().map(|&(m, _)| m).collect();
                Cell { family, seed, sim: grid.simulator(family, seed), measures }
            })
        })
        .collect();
    let fits = parallel::try_map(&cells, |cell| fit_cell(cell, &calib, grid, opts, tasks))?;

    // summaries[cell][case]
    let mut summaries: Vec<Vec<CaseSummary>> = cells.iter().map(|_| Vec::with_capacity(eval.len())).collect();
    for case in &eval {
        let g = geometry(case);
        let jobs: Vec<(&Cell, &CellFit)> = cells.iter().zip(&fits).collect();
        let per_cell = parallel::try_map(&jobs, |(cell, fit)| summarize_case(case, g.as_ref(), cell, fit, opts, tasks))?;
        for (k, s) in per_cell.into_iter().enumerate() {
            summaries[k].push(s);
        }
    }

    let mut rows = Vec::new();
    for (cell, sums) in cells.iter().zip(&summaries) {
        rows.extend(cell_rows(scenario, cell, &grid.aggregations, sums, opts, tasks, &mut notes)?);
    }
    Ok((rows, notes))
}

#[allow(clippy::too_many_arguments)]
fn cell_rows(
    scenario: &str,
    cell: &Cell,
    aggregations: &[AggregationSpec],
    sums: &[CaseSummary],
    opts: &StudyOptions,
    tasks: &[Task],
    notes: &mut Vec<String>,
) -> Result<Vec<ReportRow>> {
    let sem = semantics_for(cell.family);
    let strategies: Vec<Strategy> = aggregations.iter().map(|a| a.strategy).collect();
    let mut rows = Vec::new();
    let row = |measure: Option<Measure>, aggregation: Option<Strategy>, task: Task, split: Option<Split>, value: f64| ReportRow {
        scenario: scenario.to_string(),
        family: cell.family,
        measure,
        claimed_type: measure.and_then(|m| sem.claimed(m)),
        aggregation,
        task,
        split,
        seed: cell.seed,
        value,
    };
    let test: Vec<&CaseSummary> = sums.iter().filter(|s| s.role == Role::Test).collect();
    let pool: Vec<&CaseSummary> = sums.iter().filter(|s| s.role == Role::Pool).collect();
    let iid: Vec<&CaseSummary> = test.iter().copied().filter(|s| s.split == Split::Iid).collect();
    let tag = format!("{scenario}/{}/seed {}", cell.family, cell.seed);

    for task in [Task::SepAuroc, Task::OodAuroc] {
        if !tasks.contains(&task) {
            continue;
        }
        let labels: Vec<bool> = test.iter().map(|s| s.split == Split::Ood).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            notes.push(format!("{tag}: {task} skipped, test set lacks i.i.d. or OoD cases"));
            continue;
        }
        for (k, &m) in cell.measures.iter().enumerate() {
            for (a, &strategy) in strategies.iter().enumerate() {
                let scores: Vec<f64> = test.iter().map(|s| s.scores[k][a]).collect();
                rows.push(row(Some(m), Some(strategy), task, None, auroc(&scores, &labels)?));
            }
        }
    }

    if needs(tasks, &[Task::FdAurc, Task::FdEaurc]) {
        for split in [Split::Iid, Split::Ood] {
            let part: Vec<&CaseSummary> = test.iter().copied().filter(|s| s.split == split).collect();
            if part.is_empty() {
                continue;
            }
            let risks: Vec<f64> = part.iter().map(|s| 1.0 - s.dice).collect();
            for (k, &m) in cell.measures.iter().enumerate() {
                for (a, &strategy) in strategies.iter().enumerate() {
                    let conf: Vec<f64> = if opts.oracle_fd_confidence {
                        risks.iter().map(|r| -r).collect()
                    } else {
                        part.iter().map(|s| -s.scores[k][a]).collect()
                    };
                    if tasks.contains(&Task::FdAurc) {
                        rows.push(row(Some(m), Some(strategy), Task::FdAurc, Some(split), aurc(&conf, &risks)?));
                    }
                    if tasks.contains(&Task::FdEaurc) {
                        rows.push(row(Some(m), Some(strategy), Task::FdEaurc, Some(split), e_aurc(&conf, &risks)?));
                    }
                }
            }
        }
    }

    if tasks.contains(&Task::AlOodFraction) {
        for (k, &m) in cell.measures.iter().enumerate() {
            for (a, &strategy) in strategies.iter().enumerate() {
                let scored: Vec<(String, f64)> = pool.iter().map(|s| (s.case_id.clone(), s.scores[k][a])).collect();
                let picked = al_query_selection(&scored)?;
                let ood = picked
                    .iter()
                    .filter(|id| pool.iter().any(|s| &s.case_id == *id && s.split == Split::Ood))
                    .count();
                rows.push(row(Some(m), Some(strategy), Task::AlOodFraction, None, ood as f64 / picked.len() as f64));
            }
        }
    }

    if tasks.contains(&Task::CalibAce) && !iid.is_empty() {
        for (k, &m) in cell.measures.iter().enumerate() {
            let mut acc = AceAccumulator::new(opts.n_bins)?;
            for s in &iid {
                if let Some(a) = &s.ace[k] {
                    acc.merge(a)?;
                }
            }
            rows.push(row(Some(m), None, Task::CalibAce, Some(Split::Iid), acc.finish()?.ace));
        }
    }

    for task in [Task::SepNcc, Task::AmNcc] {
        if !tasks.contains(&task) {
            continue;
        }
        let skipped = iid.iter().filter(|s| s.ncc.iter().all(|v| v.is_none())).count();
        if skipped > 0 {
            notes.push(format!(
                "{tag}: {task} excluded {skipped} of {} i.i.d. test cases (single rater or zero rater variance)",
                iid.len()
            ));
        }
        for (k, &m) in cell.measures.iter().enumerate() {
            let vals: Vec<f64> = iid.iter().filter_map(|s| s.ncc[k]).collect();
            if let Some(v) = mean(&vals) {
                rows.push(row(Some(m), None, task, Some(Split::Iid), v));
            }
        }
    }

    if tasks.contains(&Task::AmGed) {
        let vals: Vec<f64> = iid.iter().filter_map(|s| s.ged).collect();
        if let Some(v) = mean(&vals) {
            rows.push(row(None, None, Task::AmGed, Some(Split::Iid), v));
        }
    }

    if tasks.contains(&Task::Dice) {
        for split in [Split::Iid, Split::Ood] {
            let vals: Vec<f64> = test.iter().filter(|s| s.split == split).map(|s| s.dice).collect();
            if let Some(v) = mean(&vals) {
                rows.push(row(None, None, Task::Dice, Some(split), v));
            }
        }
    }
    Ok(rows)
}
