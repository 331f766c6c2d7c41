//! Synthetic prediction models. A case's rater masks become signed-distance
//! fields; each prediction sample is a softened, jittered, noisy version of
//! the rater-averaged boundary. Distribution shift is modeled purely as a
//! larger between-sample spread.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distance::signed_distance;
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng;
use crate::types::{CaseRecord, ModelFamily, ProbabilityStack, RaterSet, Shape, Split};

/// Fields left out of a serialized config take the defaults of its family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PartialSimulatorConfig")]
pub struct SimulatorConfig {
    pub family: ModelFamily,
    pub n_samples: usize,
    /// Scale applied to the mean logit; 0 gives logit 0 everywhere.
    pub fidelity: f64,
    /// Per-voxel logit noise sd within each sample.
    pub sample_spread: f64,
    pub ood_spread_multiplier: f64,
    /// Width (voxels) of the logistic ramp across each rater boundary;
    /// 0 gives a hard step.
    pub border_softness: f64,
    /// Per-sample boundary offset sd in voxels, relative to `sample_spread`.
    pub boundary_jitter: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig::for_family(ModelFamily::Ttd)
    }
}

impl SimulatorConfig {
    pub fn for_family(family: ModelFamily) -> Self {
        let n_samples = match family {
            ModelFamily::Deterministic => 1,
            ModelFamily::Ensemble => 5,
            _ => 10,
        };
        let (sample_spread, boundary_jitter) = match family {
            ModelFamily::Tta => (0.3, 2.0),
            ModelFamily::Ssn => (0.3, 1.0),
            _ => (0.5, 1.0),
        };
        SimulatorConfig {
            family,
            n_samples,
            fidelity: 0.8,
            sample_spread,
            ood_spread_multiplier: 1.0,
            border_softness: 1.0,
            boundary_jitter,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        match (self.family, self.n_samples) {
            (ModelFamily::Deterministic, 1) => {}
            (ModelFamily::Deterministic, s) => return bad(format!("deterministic model needs 1 sample, got {s}")),
            (f, s) if s < 2 => return bad(format!("{f} needs at least 2 samples, got {s}")),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return bad(format!("fidelity {} outside [0, 1]", self.fidelity));
        }
        if !(self.sample_spread >= 0.0 && self.sample_spread.is_finite()) {
            return bad(format!("sample_spread {} must be >= 0", self.sample_spread));
        }
        if !(self.ood_spread_multiplier >= 1.0 && self.ood_spread_multiplier.is_finite()) {
            return bad(format!("ood_spread_multiplier {} must be >= 1", self.ood_spread_multiplier));
        }
        if !(self.border_softness >= 0.0 && self.border_softness.is_finite()) {
            return bad(format!("border_softness {} must be >= 0", self.border_softness));
        }
        if !(self.boundary_jitter >= 0.0 && self.boundary_jitter.is_finite()) {
            return bad(format!("boundary_jitter {} must be >= 0", self.boundary_jitter));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct PartialSimulatorConfig {
    #[serde(default)]
    family: Option<ModelFamily>,
    n_samples: Option<usize>,
    fidelity: Option<f64>,
    sample_spread: Option<f64>,
    ood_spread_multiplier: Option<f64>,
    border_softness: Option<f64>,
    boundary_jitter: Option<f64>,
    seed: Option<u64>,
}

impl From<PartialSimulatorConfig> for SimulatorConfig {
    fn from(p: PartialSimulatorConfig) -> Self {
        let base = SimulatorConfig::for_family(p.family.unwrap_or(ModelFamily::Ttd));
        SimulatorConfig {
            n_samples: p.n_samples.unwrap_or(base.n_samples),
            fidelity: p.fidelity.unwrap_or(base.fidelity),
            sample_spread: p.sample_spread.unwrap_or(base.sample_spread),
            ood_spread_multiplier: p.ood_spread_multiplier.unwrap_or(base.ood_spread_multiplier),
            border_softness: p.border_softness.unwrap_or(base.border_softness),
            boundary_jitter: p.boundary_jitter.unwrap_or(base.boundary_jitter),
            seed: p.seed.unwrap_or(base.seed),
            ..base
        }
    }
}

/// Signed-distance fields of a case's raters, sorted by mask volume.
/// Computing these dominates the cost of small runs, so callers that
/// simulate one case many times should build this once.
#[derive(Debug, Clone)]
pub struct CaseGeometry {
    shape: Shape,
    distances: Vec<Vec<f64>>,
}

impl CaseGeometry {
    pub fn new(raters: &RaterSet) -> Self {
        let mut order: Vec<usize> = (0..raters.raters()).collect();
        let volume = |r: usize| raters.mask(r).iter().filter(|&&m| m == 1).count();
        order.sort_by_key(|&r| (volume(r), r));
        let binary = |r: usize| raters.mask(r).iter().map(|&m| u8::from(m == 1)).collect::<Vec<u8>>();
        let distances = order.iter().map(|&r| signed_distance(raters.shape(), &binary(r))).collect();
        CaseGeometry { shape: raters.shape().clone(), distances }
    }

    pub fn raters(&self) -> usize {
        self.distances.len()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ramp(d: f64, softness: f64) -> f64 {
    if softness > 0.0 {
        sigmoid(d / softness)
    } else if d > 0.0 {
        1.0
    } else if d < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn scaled_logit(p: f64, fidelity: f64) -> f64 {
    if fidelity == 0.0 {
        0.0
    } else if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        fidelity * (p / (1.0 - p)).ln()
    }
}

/// How each sample picks its target boundary.
#[derive(Clone, Copy)]
enum Target {
    /// Average of all rater ramps.
    RaterMean,
    /// One rater contour, interpolated at position `t` in `[0, R-1]`.
    Interpolated(f64),
}

fn sample_foreground(geom: &CaseGeometry, cfg: &SimulatorConfig, spread: f64, seed: u64, target: Target) -> Vec<f64> {
    let mut r = rng::stream(seed, "sample", 0);
    let delta = if spread > 0.0 && cfg.boundary_jitter > 0.0 {
        Normal::new(0.0, spread * cfg.boundary_jitter).expect("finite sd").sample(&mut r)
    } else {
        0.0
    };
    let n = geom.shape.len();
    let ramps: Vec<f64> = match target {
        Target::RaterMean => {
            let rc = geom.distances.len() as f64;
            (0..n)
                .map(|v| geom.distances.iter().map(|d| ramp(d[v] + delta, cfg.border_softness)).sum::<f64>() / rc)
                .collect()
        }
        Target::Interpolated(t) => {
            let lo = (t.floor() as usize).min(geom.distances.len() - 1);
            let hi = (lo + 1).min(geom.distances.len() - 1);
            let f = t - lo as f64;
            let (a, b) = (&geom.distances[lo], &geom.distances[hi]);
            (0..n)
                .map(|v| {
                    let d = if f == 0.0 { a[v] } else { (1.0 - f) * a[v] + f * b[v] };
                    ramp(d + delta, cfg.border_softness)
                })
                .collect()
        }
    };
    let mut noise = rng::stream(seed, "voxel-noise", 0);
    ramps
        .into_iter()
        .map(|p| {
            let eps: f64 = if spread > 0.0 { spread * Distribution::<f64>::sample(&StandardNormal, &mut noise) } else { 0.0 };
            sigmoid(scaled_logit(p, cfg.fidelity) + eps)
        })
        .collect()
}

fn case_seed(cfg: &SimulatorConfig, case_id: &str) -> u64 {
    rng::derive_seed(cfg.seed, &format!("simulate/{case_id}"), 0)
}

fn spread_for(cfg: &SimulatorConfig, split: Split) -> f64 {
    match (cfg.family, split) {
        (ModelFamily::Deterministic, _) => 0.0,
        (_, Split::Ood) => cfg.sample_spread * cfg.ood_spread_multiplier,
        (_, Split::Iid) => cfg.sample_spread,
    }
}

fn assemble(geom: &CaseGeometry, samples: Vec<Vec<f64>>) -> Result<ProbabilityStack> {
    let fg: Vec<f64> = samples.into_iter().flatten().collect();
    ProbabilityStack::from_foreground(fg.len() / geom.shape.len(), geom.shape.clone(), &fg)
}

/// Prediction stack for a case whose rater geometry is already computed.
/// SSN configs dispatch to [`simulate_ssn_with_geometry`] when the case has
/// at least two raters.
pub fn simulate_with_geometry(geom: &CaseGeometry, case_id: &str, split: Split, cfg: &SimulatorConfig) -> Result<ProbabilityStack> {
    cfg.validate()?;
    // with a single reference there is no label variability to sample; the
    // plain model is what SSN sampling reduces to for identical raters
    if cfg.family == ModelFamily::Ssn && geom.raters() >= 2 {
        return simulate_ssn_with_geometry(geom, case_id, split, cfg);
    }
    let spread = spread_for(cfg, split);
    let base = case_seed(cfg, case_id);
    let seeds: Vec<u64> = (0..cfg.n_samples as u64).map(|k| rng::derive_seed(base, "sample", k)).collect();
    let samples = parallel::map(&seeds, |&s| sample_foreground(geom, cfg, spread, s, Target::RaterMean));
    assemble(geom, samples)
}

/// Each sample targets one rater-consistent contour drawn uniformly from
/// the family interpolating the volume-sorted raters.
pub fn simulate_ssn_with_geometry(geom: &CaseGeometry, case_id: &str, split: Split, cfg: &SimulatorConfig) -> Result<ProbabilityStack> {
    cfg.validate()?;
    if geom.raters() < 2 {
        return Err(Error::NeedsRaters { needed: 2, got: geom.raters() });
    }
    let spread = spread_for(cfg, split);
    let base = case_seed(cfg, case_id);
    let mut pick = rng::stream(base, "ssn-target", 0);
    let top = (geom.raters() - 1) as f64;
    let jobs: Vec<(u64, f64)> = (0..cfg.n_samples as u64)
        .map(|k| (rng::derive_seed(base, "sample", k), pick.random_range(0.0..=top)))
        .collect();
    let samples = parallel::map(&jobs, |&(s, t)| sample_foreground(geom, cfg, spread, s, Target::Interpolated(t)));
    assemble(geom, samples)
}

pub fn simulate_predictions(case: &CaseRecord, cfg: &SimulatorConfig) -> Result<ProbabilityStack> {
    simulate_with_geometry(&CaseGeometry::new(&case.raters), &case.case_id, case.split, cfg)
}

pub fn simulate_ssn_samples(case: &CaseRecord, cfg: &SimulatorConfig) -> Result<ProbabilityStack> {
    simulate_ssn_with_geometry(&CaseGeometry::new(&case.raters), &case.case_id, case.split, cfg)
}
