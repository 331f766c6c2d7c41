//! Image-level aggregation of pixel uncertainty maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Shape, UncertaintyMap};

pub const DEFAULT_WINDOW_EDGE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "IMAGE_SUM")]
    ImageSum,
    #[serde(rename = "PATCH_MAX")]
    PatchMax,
    #[serde(rename = "THRESHOLD_MEAN")]
    ThresholdMean,
}

impl Strategy {
    pub const ALL: &'static [Strategy] = &[Strategy::ImageSum, Strategy::PatchMax, Strategy::ThresholdMean];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::ImageSum => "IMAGE_SUM",
            Strategy::PatchMax => "PATCH_MAX",
            Strategy::ThresholdMean => "THRESHOLD_MEAN",
        }
    }

    /// Pairings the strategy was not designed for. Image sums track object
    /// size on single-object data; threshold means depend on a foreground
    /// ratio that multi-class scenes do not have.
    pub fn pairing_warning(&self, single_object: bool) -> Option<&'static str> {
        match (self, single_object) {
            (Strategy::ImageSum, true) => Some("IMAGE_SUM_ON_SINGLE_OBJECT: score correlates with object size"),
            (Strategy::ThresholdMean, false) => {
                Some("THRESHOLD_MEAN_ON_MULTI_OBJECT: foreground-ratio threshold is ill-defined")
            }
            _ => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "IMAGE_SUM" | "IMAGE" => Ok(Strategy::ImageSum),
            "PATCH_MAX" | "PATCH" => Ok(Strategy::PatchMax),
            "THRESHOLD_MEAN" | "THRESHOLD" => Ok(Strategy::ThresholdMean),
            _ => Err(Error::Parse(format!("unknown aggregation '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub strategy: Strategy,
    #[serde(default = "default_window")]
    pub window_edge: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_EDGE
}

impl AggregationSpec {
    pub fn new(strategy: Strategy) -> Self {
        AggregationSpec { strategy, window_edge: DEFAULT_WINDOW_EDGE, threshold: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_edge == 0 {
            return Err(Error::ConfigInvalid("window_edge must be >= 1".into()));
        }
        match (self.strategy, self.threshold) {
            (Strategy::ThresholdMean, None) => {
                Err(Error::ConfigInvalid("THRESHOLD_MEAN requires a threshold".into()))
            }
            (_, Some(t)) if !(t >= 0.0) => Err(Error::ConfigInvalid(format!("negative threshold {t}"))),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, map: &UncertaintyMap) -> Result<f64> {
        self.validate()?;
        Ok(match self.strategy {
            Strategy::ImageSum => aggregate_image_sum(map),
            Strategy::PatchMax => aggregate_patch_max(map, self.window_edge),
            Strategy::ThresholdMean => aggregate_threshold_mean(map, self.threshold.unwrap_or(0.0)),
        })
    }
}

pub fn aggregate_image_sum(map: &UncertaintyMap) -> f64 {
    map.data.iter().sum()
}

/// Largest sum over all stride-1 windows of edge `window_edge` (no padding).
/// Along axes shorter than the window, the window is clipped to the extent.
pub fn aggregate_patch_max(map: &UncertaintyMap, window_edge: usize) -> f64 {
    patch_max(&map.shape, &map.data, window_edge)
}

pub(crate) fn patch_max(shape: &Shape, data: &[f64], window_edge: usize) -> f64 {
    let window_edge = window_edge.max(1);
    let mut dims = shape.dims().to_vec();
    let mut buf = data.to_vec();
    for axis in 0..dims.len() {
        let w = window_edge.min(dims[axis]);
        buf = window_sums_along(&buf, &dims, axis, w);
        dims[axis] = dims[axis] - w + 1;
    }
    buf.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Sums of `w` consecutive elements along `axis` via a running sum.
fn window_sums_along(data: &[f64], dims: &[usize], axis: usize, w: usize) -> Vec<f64> {
    let n = dims[axis];
    let out_n = n - w + 1;
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * out_n * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| data[(o * n + k) * inner + i];
            let mut running: f64 = (0..w).map(at).sum();
            out[(o * out_n) * inner + i] = running;
            for k in 1..out_n {
                running += at(k + w - 1) - at(k - 1);
                out[(o * out_n + k) * inner + i] = running;
            }
        }
    }
    out
}

/// Mean of pixels strictly above `threshold`; zero when none qualify.
pub fn aggregate_threshold_mean(map: &UncertaintyMap, threshold: f64) -> f64 {
    let (sum, count) = map
        .data
        .iter()
        .filter(|&&u| u > threshold)
        .fold((0.0, 0usize), |(s, c), &u| (s + u, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Linear-interpolation quantile (the "linear" method: position `q (n-1)`
/// between order statistics). `values` need not be sorted.
pub fn quantile_linear(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Threshold derivation from validation data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    /// Mean predicted foreground ratio.
    pub alpha: f64,
    pub quantile: f64,
    pub threshold: f64,
}

/// Picks λ so that the fraction of validation pixels above it matches the
/// mean predicted foreground ratio: `λ = Q(1 - α, pooled values)`.
///
/// `val_pred_masks` are binary or label maps; any non-zero label counts as
/// foreground.
pub fn compute_threshold(val_maps: &[&UncertaintyMap], val_pred_masks: &[&[u8]]) -> Result<ThresholdFit> {
    if val_maps.is_empty() || val_pred_masks.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if val_maps.len() != val_pred_masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} validation maps vs {} predicted masks",
            val_maps.len(),
            val_pred_masks.len()
        )));
    }
    let mut alpha = 0.0;
    for (m, mask) in val_maps.iter().zip(val_pred_masks) {
        if m.data.len() != mask.len() {
            return Err(Error::ShapeMismatch("validation map and mask differ in size".into()));
        }
        alpha += mask.iter().filter(|&&l| l != 0).count() as f64 / mask.len() as f64;
    }
    alpha /= val_maps.len() as f64;
    let quantile = 1.0 - alpha;
    let mut pooled: Vec<f64> = val_maps.iter().flat_map(|m| m.data.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::EmptyValidation);
    }
    pooled.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&pooled, quantile);
    Ok(ThresholdFit { alpha, quantile, threshold })
}
