//! Browser bindings for three interactive views: per-pixel uncertainty on a
//! 2D toy case, risk-coverage curves, and the aggregation size sweep.
//!
//! Every export returns a JSON string so the page needs no generated
//! typings. The `*_json` functions hold the logic and run natively too.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use segunc_core::measures::family_maps;
use segunc_core::metrics::{aurc, e_aurc, risk_coverage_curve, RiskCoveragePoint};
use segunc_core::simulate::{simulate_predictions, SimulatorConfig};
use segunc_core::study::{size_sweep, SweepOptions};
use segunc_core::toygen::{generate_toy_case, ToyCaseSpec, ToyObject};
use segunc_core::{CaseRecord, Measure, ModelFamily, Role, Split, UncertaintyType};

/// Side length of the explorer canvas, in pixels.
pub const EXPLORER_EDGE: usize = 64;

#[derive(Serialize)]
struct MapView {
    measure: Measure,
    claimed_type: UncertaintyType,
    max: f64,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct ExplorerView {
    edge: usize,
    image: Vec<f64>,
    /// Fraction of raters marking each pixel.
    rater_mean: Vec<f64>,
    maps: Vec<MapView>,
}

fn to_js(e: segunc_core::Error) -> JsValue {
    JsValue::from_str(&format!("{}: {e}", e.code()))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("view serializes")
}

pub fn explore_json(family: &str, radius: f64, blur: f64, spread: f64, ood: bool, seed: u64) -> segunc_core::Result<String> {
    let family: ModelFamily = family.parse()?;
    let c = (EXPLORER_EDGE as f64 - 1.0) / 2.0;
    let spec = ToyCaseSpec {
        object: ToyObject::Sphere,
        radius,
        center: vec![c, c],
        intensity: 0.7,
        blur_sigma: blur,
        background_noise_sd: 0.05,
        ood,
    };
    let case = generate_toy_case(&spec, EXPLORER_EDGE, seed)?;
    let record = CaseRecord {
        case_id: "explorer".into(),
        split: if ood { Split::Ood } else { Split::Iid },
        role: Role::Test,
        stack: None,
        raters: case.raters,
        scenario_tags: vec![],
    };
    let mut cfg = SimulatorConfig { seed, ..SimulatorConfig::for_family(family) };
    if family != ModelFamily::Deterministic {
        cfg.sample_spread = spread;
    }
    cfg.ood_spread_multiplier = 4.0;
    let stack = simulate_predictions(&record, &cfg)?;
    let maps = family_maps(&stack, family)?
        .into_iter()
        .map(|m| MapView {
            measure: m.measure,
            claimed_type: m.claimed_type,
            max: m.data.iter().copied().fold(0.0, f64::max),
            data: m.data,
        })
        .collect();
    Ok(json(&ExplorerView {
        edge: EXPLORER_EDGE,
        image: case.image,
        rater_mean: record.raters.mean_indicator(1),
        maps,
    }))
}

#[derive(Serialize)]
struct RiskCoverageView {
    curve: Vec<RiskCoveragePoint>,
    aurc: f64,
    e_aurc: f64,
}

pub fn risk_coverage_json(confidences: &[f64], risks: &[f64]) -> segunc_core::Result<String> {
    Ok(json(&RiskCoverageView {
        curve: risk_coverage_curve(confidences, risks)?,
        aurc: aurc(confidences, risks)?,
        e_aurc: e_aurc(confidences, risks)?,
    }))
}

pub fn size_sweep_json(family: &str, radii: &[f64], seed: u64) -> segunc_core::Result<String> {
    let family: ModelFamily = family.parse()?;
    let measure = if family == ModelFamily::Deterministic { Measure::OneMinusMsr } else { Measure::Pe };
    let cfg = SimulatorConfig { seed, ..SimulatorConfig::for_family(family) };
    // 2D keeps the sweep interactive
    let opts = SweepOptions { volume_edge: EXPLORER_EDGE, rank: 2, ..SweepOptions::default() };
    Ok(json(&size_sweep(&cfg, measure, radii, &opts)?))
}

/// Simulated prediction and uncertainty maps for a centered disc.
#[wasm_bindgen]
pub fn explore(family: &str, radius: f64, blur: f64, spread: f64, ood: bool, seed: u32) -> Result<String, JsValue> {
    explore_json(family, radius, blur, spread, ood, u64::from(seed)).map_err(to_js)
}

/// Risk-coverage curve, AURC and E-AURC for per-case confidences and risks.
#[wasm_bindgen]
pub fn risk_coverage(confidences: Vec<f64>, risks: Vec<f64>) -> Result<String, JsValue> {
    risk_coverage_json(&confidences, &risks).map_err(to_js)
}

/// Image-level scores of discs of growing radius under each aggregation.
#[wasm_bindgen]
pub fn aggregation_sweep(family: &str, radii: Vec<f64>, seed: u32) -> Result<String, JsValue> {
    size_sweep_json(family, &radii, u64::from(seed)).map_err(to_js)
}
