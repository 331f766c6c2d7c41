use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_image_sum, aggregate_patch_max, aggregate_threshold_mean, compute_threshold, DEFAULT_WINDOW_EDGE};
use crate::error::{Error, Result};
use crate::measures::compute_measure;
use crate::metrics::ncc;
use crate::rng;
use crate::simulate::{simulate_predictions, SimulatorConfig};
use crate::toygen::{generate_toy_case, ToyCaseSpec, ToyObject};
use crate::types::{mean_prediction, CaseRecord, Measure, Role, Split, UncertaintyMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub radius: f64,
    /// Foreground voxels of the reference mask.
    pub volume: f64,
    pub image_sum: f64,
    pub patch_max: f64,
    pub threshold_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSweep {
    pub measure: Measure,
    pub threshold: f64,
    pub points: Vec<SweepPoint>,
    /// Pearson correlation of each score with volume.
    pub r_image_sum: f64,
    pub r_patch_max: f64,
    pub r_threshold_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub volume_edge: usize,
    pub rank: usize,
    /// Relative spread of per-case model fidelity (image contrast), drawn
    /// independently of size; 0 gives every case the same difficulty.
    pub fidelity_jitter: f64,
    /// Maximum per-axis sub-voxel offset of each object's center, so that
    /// discretization differs between cases.
    pub center_jitter: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { volume_edge: 40, rank: 3, fidelity_jitter: 0.2, center_jitter: 0.5 }
    }
}

/// Scores one centered, crisp object per radius with every aggregation.
/// The threshold is fitted on the sweep's own maps, so the sweep probes how
/// strongly each score follows object size rather than uncertainty.
pub fn size_sweep(cfg: &SimulatorConfig, measure: Measure, radii: &[f64], opts: &SweepOptions) -> Result<SizeSweep> {
    if radii.len() < 2 {
        return Err(Error::EmptyInput);
    }
    if !(0.0..1.0).contains(&opts.fidelity_jitter) {
        return Err(Error::ConfigInvalid(format!("fidelity_jitter {} outside [0, 1)", opts.fidelity_jitter)));
    }
    let (volume_edge, rank) = (opts.volume_edge, opts.rank);
    let mut difficulty = rng::stream(cfg.seed, "sweep-case", 0);
    let mut maps: Vec<UncertaintyMap> = Vec::with_capacity(radii.len());
    let mut masks = Vec::with_capacity(radii.len());
    let mut volumes = Vec::with_capacity(radii.len());
    let center = vec![(volume_edge as f64 - 1.0) / 2.0; rank];
    for (k, &radius) in radii.iter().enumerate() {
        let spec = ToyCaseSpec {
            object: ToyObject::Sphere,
            radius,
            center: center.iter().map(|&c| c + opts.center_jitter * difficulty.random_range(-1.0..=1.0)).collect(),
            intensity: 0.7,
            blur_sigma: 0.0,
            background_noise_sd: 0.0,
            ood: false,
        };
        let case = generate_toy_case(&spec, volume_edge, rng::derive_seed(cfg.seed, "sweep", k as u64))?;
        volumes.push(case.raters.mask(0).iter().map(|&v| f64::from(v)).sum());
        let record = CaseRecord {
            case_id: format!("sweep-{k:03}"),
            split: Split::Iid,
            role: Role::Test,
            stack: None,
            raters: case.raters,
            scenario_tags: vec![],
        };
        let scale = 1.0 + opts.fidelity_jitter * difficulty.random_range(-1.0..=1.0);
        let case_cfg = SimulatorConfig { fidelity: (cfg.fidelity * scale).min(1.0), ..cfg.clone() };
        let stack = simulate_predictions(&record, &case_cfg)?;
        masks.push(mean_prediction(&stack).labels);
        maps.push(compute_measure(&stack, measure)?);
    }
    let refs: Vec<&UncertaintyMap> = maps.iter().collect();
    let mrefs: Vec<&[u8]> = masks.iter().map(Vec::as_slice).collect();
    let threshold = compute_threshold(&refs, &mrefs)?.threshold;
    let points: Vec<SweepPoint> = radii
        .iter()
        .zip(&maps)
        .zip(&volumes)
        .map(|((&radius, map), &volume)| SweepPoint {
            radius,
            volume,
            image_sum: aggregate_image_sum(map),
            patch_max: aggregate_patch_max(map, DEFAULT_WINDOW_EDGE),
            threshold_mean: aggregate_threshold_mean(map, threshold),
        })
        .collect();
    let r = |f: fn(&SweepPoint) -> f64| -> Result<f64> {
        let v: Vec<f64> = points.iter().map(f).collect();
        Ok(ncc(&volumes, &v)?.value)
    };
    Ok(SizeSweep {
        measure,
        threshold,
        r_image_sum: r(|p| p.image_sum)?,
        r_patch_max: r(|p| p.patch_max)?,
        r_threshold_mean: r(|p| p.threshold_mean)?,
        points,
    })
}
