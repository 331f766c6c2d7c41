use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use segunc_core::aggregation::AggregationSpec;
use segunc_core::io::manifest::{self, Manifest, ManifestCase, MANIFEST_FILE};
use segunc_core::io::report::{self, export_heatmap, format_g6, render_report, REPORT_FILES};
use segunc_core::io::{create_run_dir, RunConfig};
use segunc_core::measures::family_maps;
use segunc_core::metrics::mean_rater_dice;
use segunc_core::simulate::{simulate_predictions, SimulatorConfig};
use segunc_core::study::{
    applicable_tasks, direction_checks, evaluate_cases, run_downstream_eval, run_separation_study, StudyReport, Task,
};
use segunc_core::toygen::{attach_eval_splits, build_scenario, ToyParams, ToyScenario};
use segunc_core::{validate_stack, Error, Result, UncertaintyMap, UncertaintyType};

use crate::{AggregateArgs, EvaluateArgs, ReportArgs, SimulateArgs, StudyArgs, ToygenArgs, UncertaintyArgs};

/// Materialized in batches so memory stays bounded on large scenarios.
const WRITE_BATCH: usize = 16;

/// Creates `dir`, refusing to reuse a non-empty one.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory is not empty; refusing to overwrite"),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn mkdir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v).expect("JSON value serializes") + "\n"))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Parse(format!("CSV: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn finish(out: &Path, summary: Value) -> Result<Value> {
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map(RunConfig::load).unwrap_or_else(|| Ok(RunConfig::default()))
}

pub fn toygen(a: ToygenArgs) -> Result<Value> {
    let mut params: ToyParams = load_config(a.config.as_deref())?.data.toy;
    if let Some(edge) = a.volume_edge {
        params.volume_edge = edge;
    }
    let mut scenario = build_scenario(ToyScenario::new(a.scenario), a.seed, &params)?;
    if a.n_val + a.n_pool > 0 {
        attach_eval_splits(&mut scenario, a.n_val, a.n_pool);
    }
    fresh_dir(&a.out)?;
    let raters_dir = mkdir(&a.out.join("raters"))?;
    let images_dir = if a.no_images { None } else { Some(mkdir(&a.out.join("images"))?) };

    let mut m = Manifest::new(a.scenario.to_string());
    let mut table = Vec::with_capacity(scenario.cases.len());
    for batch in scenario.cases.chunks(WRITE_BATCH) {
        let cases = segunc_core::parallel::try_map(batch, |stub| stub.materialize(&params))?;
        for (stub, case) in batch.iter().zip(cases) {
            let file = format!("{}.npy", stub.case_id);
            manifest::write_raters(&raters_dir.join(&file), &case.raters)?;
            let image = match &images_dir {
                Some(dir) => {
                    manifest::write_image(&dir.join(&file), &case.shape, &case.image)?;
                    Some(PathBuf::from("images").join(&file))
                }
                None => None,
            };
            m.cases.push(ManifestCase {
                case_id: stub.case_id.clone(),
                split: stub.split,
                role: stub.role,
                image,
                stack: None,
                raters: PathBuf::from("raters").join(&file),
                scenario_tags: stub.scenario_tags.clone(),
            });
            table.push(vec![
                stub.case_id.clone(),
                stub.role.to_string(),
                stub.split.to_string(),
                stub.spec.object.to_string(),
                format_g6(stub.spec.radius),
                format_g6(stub.spec.intensity),
                format_g6(stub.spec.blur_sigma),
                stub.shift.map(|s| s.to_string()).unwrap_or_default(),
            ]);
        }
    }
    m.save(a.out.join(MANIFEST_FILE))?;
    write_csv(
        &a.out.join("cases.csv"),
        &["case_id", "role", "split", "object", "radius", "intensity", "blur_sigma", "shift"],
        &table,
    )?;
    let mut counts = BTreeMap::new();
    for c in &m.cases {
        *counts.entry(format!("{}/{}", c.role, c.split)).or_insert(0usize) += 1;
    }
    finish(
        &a.out,
        json!({
            "command": "toygen",
            "scenario": a.scenario.to_string(),
            "seed": a.seed,
            "cases": m.cases.len(),
            "counts": counts,
            "params": params,
            "manifest": a.out.join(MANIFEST_FILE),
        }),
    )
}

pub fn simulate(a: SimulateArgs) -> Result<Value> {
    let cfg: SimulatorConfig = match &a.config {
        Some(p) => RunConfig::load(p)?.grid.simulator(a.family, a.seed),
        None => SimulatorConfig { seed: a.seed, ..SimulatorConfig::for_family(a.family) },
    };
    cfg.validate()?;
    let (src, base) = Manifest::load(&a.manifest)?;
    fresh_dir(&a.out)?;
    let stacks_dir = mkdir(&a.out.join("stacks"))?;
    let raters_dir = mkdir(&a.out.join("raters"))?;

    let mut m = Manifest::new(src.dataset.clone());
    let mut table = Vec::with_capacity(src.cases.len());
    for batch in src.cases.chunks(WRITE_BATCH) {
        let stacks = segunc_core::parallel::try_map(batch, |c| {
            let case = manifest::load_case(&base, c)?;
            let stack = simulate_predictions(&case, &cfg)?;
            let dice = mean_rater_dice(&stack, &case.raters, 1)?;
            Ok((stack, dice))
        })?;
        for (c, (stack, dice)) in batch.iter().zip(stacks) {
            let file = format!("{}.npy", c.case_id);
            manifest::write_stack(&stacks_dir.join(&file), &stack)?;
            let from = base.join(&c.raters);
            let to = raters_dir.join(&file);
            fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
            m.cases.push(ManifestCase {
                stack: Some(PathBuf::from("stacks").join(&file)),
                raters: PathBuf::from("raters").join(&file),
                image: None,
                ..c.clone()
            });
            table.push(vec![c.case_id.clone(), c.role.to_string(), c.split.to_string(), stack.samples().to_string(), format_g6(dice)]);
        }
    }
    m.save(a.out.join(MANIFEST_FILE))?;
    write_csv(&a.out.join("cases.csv"), &["case_id", "role", "split", "samples", "mean_rater_dice"], &table)?;
    finish(
        &a.out,
        json!({
            "command": "simulate",
            "family": a.family.to_string(),
            "simulator": cfg,
            "cases": m.cases.len(),
            "manifest": a.out.join(MANIFEST_FILE),
        }),
    )
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into())
}

pub fn uncertainty(a: UncertaintyArgs) -> Result<Value> {
    let stack = manifest::read_stack(&a.stack)?;
    validate_stack(&stack)?;
    let maps = family_maps(&stack, a.family)?;
    fresh_dir(&a.out)?;
    let case_id = stem(&a.stack);
    let mut table = Vec::new();
    let mut entries = Vec::new();
    for map in &maps {
        let name = map.measure.to_string().to_ascii_lowercase();
        manifest::write_image(&a.out.join(format!("{name}.npy")), &map.shape, &map.data)?;
        let heatmap = if a.heatmaps { Some(export_heatmap(&a.out, &format!("{name}-heatmap"), &case_id, a.family, map)?) } else { None };
        let sum: f64 = map.data.iter().sum();
        let max = map.data.iter().copied().fold(0.0, f64::max);
        let mean = sum / map.data.len() as f64;
        table.push(vec![map.measure.to_string(), map.claimed_type.to_string(), format_g6(mean), format_g6(max), format_g6(sum)]);
        entries.push(json!({
            "measure": map.measure,
            "claimed_type": map.claimed_type,
            "file": format!("{name}.npy"),
            "mean": mean,
            "max": max,
            "sum": sum,
            "heatmap_bound": heatmap.map(|h| h.normalization_upper),
        }));
    }
    write_csv(&a.out.join("uncertainty.csv"), &["measure", "claimed_type", "mean", "max", "sum"], &table)?;
    finish(
        &a.out,
        json!({
            "command": "uncertainty",
            "case_id": case_id,
            "family": a.family.to_string(),
            "samples": stack.samples(),
            "classes": stack.classes(),
            "shape": stack.shape().dims(),
            "maps": entries,
        }),
    )
}

pub fn aggregate(a: AggregateArgs) -> Result<Value> {
    let spec = AggregationSpec { strategy: a.strategy, window_edge: a.window_edge, threshold: a.threshold };
    spec.validate()?;
    let mut scores = Vec::with_capacity(a.maps.len());
    for path in &a.maps {
        let (shape, data) = manifest::read_image(path)?;
        let map = UncertaintyMap::new(shape, data, a.measure, UncertaintyType::Pu)?;
        scores.push((path.clone(), spec.apply(&map)?));
    }
    fresh_dir(&a.out)?;
    if let Some(w) = a.strategy.pairing_warning(true) {
        eprintln!("{}", json!({ "warning": w }));
    }
    let table: Vec<Vec<String>> =
        scores.iter().map(|(p, s)| vec![p.display().to_string(), a.strategy.to_string(), format_g6(*s)]).collect();
    write_csv(&a.out.join("scores.csv"), &["map", "strategy", "score"], &table)?;
    finish(
        &a.out,
        json!({
            "command": "aggregate",
            "aggregation": spec,
            "scores": scores.iter().map(|(p, s)| json!({ "map": p, "score": s })).collect::<Vec<_>>(),
        }),
    )
}

fn report_summary(command: &str, report: &StudyReport, dir: &Path) -> Value {
    let tasks: BTreeSet<String> = report.rows.iter().map(|r| r.task.to_string()).collect();
    json!({
        "command": command,
        "dir": dir,
        "rows": report.rows.len(),
        "tasks": tasks,
        "notes": report.notes,
        "files": REPORT_FILES,
    })
}

pub fn evaluate(a: EvaluateArgs) -> Result<Value> {
    let mut cfg = load_config(a.config.as_deref())?;
    let (m, _) = Manifest::load(&a.manifest)?;
    cfg.data.scenarios.clear();
    cfg.data.manifests = BTreeMap::from([(m.dataset.clone(), a.manifest.clone())]);
    let cases = cfg.load_datasets(true)?.remove(&m.dataset).unwrap_or_default();

    if let Some(f) = a.family {
        cfg.grid.families = vec![f];
    }
    if cases.iter().any(|c| c.stack.is_some()) {
        // stored stacks come from one model; other families or seeds would
        // only reinterpret the same samples
        if cfg.grid.families.len() != 1 {
            return Err(Error::ConfigInvalid("manifest holds prediction stacks; pass --family".into()));
        }
        cfg.grid.seeds.truncate(1);
    }
    let available = applicable_tasks(&cases);
    let tasks = if a.tasks.is_empty() { available.clone() } else { a.tasks.clone() };
    for t in &tasks {
        if matches!(t, Task::SepNcc | Task::SepAuroc) {
            return Err(Error::ConfigInvalid(format!("{t} belongs to `study separation`")));
        }
        if !available.contains(t) {
            return Err(Error::MissingSplit(format!("{t} cannot run on {}: {}", m.dataset, task_needs(*t))));
        }
    }
    let report = evaluate_cases(&m.dataset, &cases, &cfg.grid, &cfg.options, &tasks)?;
    fresh_dir(&a.out)?;
    render_report(&report, &a.out)?;
    finish(&a.out, report_summary("evaluate", &report, &a.out))
}

fn task_needs(t: Task) -> &'static str {
    match t {
        Task::OodAuroc => "needs i.i.d. and OoD TEST cases",
        Task::AlOodFraction => "needs POOL cases",
        Task::AmNcc | Task::AmGed => "needs i.i.d. TEST cases with at least two raters",
        Task::CalibAce => "needs i.i.d. TEST cases",
        _ => "needs TEST cases",
    }
}

pub fn study(a: StudyArgs, downstream: bool) -> Result<Value> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.data.master_seed = seed;
    }
    cfg.validate()?;
    let datasets = cfg.load_datasets(downstream)?;
    let report = if downstream {
        // data sets without the needed splits are skipped; only an empty
        // result is an error
        let mut report = StudyReport::default();
        let mut first_missing = None;
        for (name, cases) in &datasets {
            match run_downstream_eval(name, cases, &cfg.grid, &cfg.options) {
                Ok(r) => report.merge(r),
                Err(Error::MissingSplit(m)) => {
                    report.notes.push(format!("{name}: skipped, {m}"));
                    first_missing.get_or_insert(Error::MissingSplit(format!("{name}: {m}")));
                }
                Err(e) => return Err(e),
            }
        }
        if report.rows.is_empty() {
            return Err(first_missing.unwrap_or(Error::MissingScenario("no data sets configured".into())));
        }
        report.canonicalize();
        report
    } else {
        run_separation_study(&datasets, &cfg.grid, &cfg.options)?
    };
    let root = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let dir = create_run_dir(&root)?;
    cfg.save(dir.join("config.json"))?;
    render_report(&report, &dir)?;
    let command = if downstream { "study downstream" } else { "study separation" };
    let mut summary = report_summary(command, &report, &dir);
    if !downstream {
        let checks = direction_checks(&report);
        write_text(&dir.join("directions.csv"), &report::directions_to_csv(&checks)?)?;
        let held = checks.iter().filter(|c| c.holds).count();
        summary["direction_checks"] = json!({ "held": held, "total": checks.len() });
    }
    Ok(summary)
}

pub fn report(a: ReportArgs) -> Result<Value> {
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let report = match a.input.extension().and_then(|e| e.to_str()) {
        Some("json") => report::report_from_json(&text)?,
        _ => report::report_from_csv(&text)?,
    };
    fresh_dir(&a.out)?;
    render_report(&report, &a.out)?;
    Ok(report_summary("report", &report, &a.out))
}
