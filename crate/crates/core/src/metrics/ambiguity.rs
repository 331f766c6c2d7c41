use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_aligned, dice};
use crate::error::{Error, Result};
use crate::types::{RaterSet, Shape};

/// Sets up to this size are enumerated exactly.
pub const GED_ENUMERATION_CAP: usize = 32;
pub const GED_MC_DRAWS: usize = 100_000;

/// Per-pixel population variance of the binary rater indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub shape: Shape,
    pub data: Vec<f64>,
}

pub fn rater_variance_map(raters: &RaterSet, positive_class: u8) -> Result<VarianceMap> {
    if raters.raters() < 2 {
        return Err(Error::NeedsRaters { needed: 2, got: raters.raters() });
    }
    let mean = raters.mean_indicator(positive_class);
    // variance of a Bernoulli sample: mean(y^2) - mean(y)^2 = m (1 - m)
    let data = mean.into_iter().map(|m| (m * (1.0 - m)).max(0.0)).collect();
    Ok(VarianceMap { shape: raters.shape().clone(), data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Either input was constant; `value` is then 0 (ZERO_VARIANCE).
    pub zero_variance: bool,
}

/// Normalized cross-correlation with population standard deviations.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_aligned(a.len(), b.len(), "ncc")?;
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Ok(Correlation { value: 0.0, zero_variance: true });
    }
    let value = (cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { value, zero_variance: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GedOptions {
    pub enumeration_cap: usize,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for GedOptions {
    fn default() -> Self {
        GedOptions { enumeration_cap: GED_ENUMERATION_CAP, mc_draws: GED_MC_DRAWS, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GedResult {
    pub value: f64,
    /// Squared distance before the square root (not clamped).
    pub squared: f64,
    pub enumerated: bool,
    /// Standard error of `squared`; zero when enumerated.
    pub std_error: f64,
}

/// Generalized energy distance with `d = 1 - Dice` using default options.
pub fn ged(pred_masks: &[&[u8]], rater_masks: &[&[u8]], positive_class: u8) -> Result<GedResult> {
    ged_with(pred_masks, rater_masks, positive_class, &GedOptions::default())
}

/// `sqrt(2 E[d(y, y_hat)] - E[d(y, y')] - E[d(y_hat, y_hat')])`, expectations
/// taken uniformly over full cross products including self-pairs.
pub fn ged_with(
    pred_masks: &[&[u8]],
    rater_masks: &[&[u8]],
    positive_class: u8,
    opts: &GedOptions,
) -> Result<GedResult> {
    if pred_masks.is_empty() {
        return Err(Error::EmptySet("predictions"));
    }
    if rater_masks.is_empty() {
        return Err(Error::EmptySet("raters"));
    }
    let n = pred_masks[0].len();
    if pred_masks.iter().chain(rater_masks).any(|m| m.len() != n) {
        return Err(Error::ShapeMismatch("GED masks differ in size".into()));
    }
    let mut dist = PairDistance { positive_class, cache: HashMap::new() };
    let enumerate = pred_masks.len() <= opts.enumeration_cap && rater_masks.len() <= opts.enumeration_cap;
    let (squared, std_error) = if enumerate {
        let cross = dist.mean_exact(Set::Pred, pred_masks, Set::Rater, rater_masks);
        let rr = dist.mean_exact(Set::Rater, rater_masks, Set::Rater, rater_masks);
        let pp = dist.mean_exact(Set::Pred, pred_masks, Set::Pred, pred_masks);
        (2.0 * cross - rr - pp, 0.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let draws = opts.mc_draws.max(2);
        let (cross, v_cross) = dist.mean_mc(&mut rng, draws, Set::Pred, pred_masks, Set::Rater, rater_masks);
        let (rr, v_rr) = dist.mean_mc(&mut rng, draws, Set::Rater, rater_masks, Set::Rater, rater_masks);
        let (pp, v_pp) = dist.mean_mc(&mut rng, draws, Set::Pred, pred_masks, Set::Pred, pred_masks);
        let var = (4.0 * v_cross + v_rr + v_pp) / draws as f64;
        (2.0 * cross - rr - pp, var.sqrt())
    };
    Ok(GedResult { value: squared.max(0.0).sqrt(), squared, enumerated: enumerate, std_error })
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Set {
    Pred,
    Rater,
}

struct PairDistance {
    positive_class: u8,
    cache: HashMap<(Set, usize, Set, usize), f64>,
}

impl PairDistance {
    fn get(&mut self, sa: Set, ia: usize, a: &[u8], sb: Set, ib: usize, b: &[u8]) -> f64 {
        let key = if (sa as u8, ia) <= (sb as u8, ib) { (sa, ia, sb, ib) } else { (sb, ib, sa, ia) };
        let pc = self.positive_class;
        *self
            .cache
            .entry(key)
            .or_insert_with(|| 1.0 - dice(a, b, pc).expect("lengths checked"))
    }

    fn mean_exact(&mut self, sa: Set, a: &[&[u8]], sb: Set, b: &[&[u8]]) -> f64 {
        let mut total = 0.0;
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                total += self.get(sa, i, x, sb, j, y);
            }
        }
        total / (a.len() * b.len()) as f64
    }

    /// Sample mean and sample variance of `d` over uniformly drawn pairs.
    fn mean_mc(&mut self, rng: &mut ChaCha8Rng, draws: usize, sa: Set, a: &[&[u8]], sb: Set, b: &[&[u8]]) -> (f64, f64) {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let i = rng.random_range(0..a.len());
            let j = rng.random_range(0..b.len());
            let d = self.get(sa, i, a[i], sb, j, b[j]);
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / draws as f64;
        let var = ((sum_sq - draws as f64 * mean * mean) / (draws - 1) as f64).max(0.0);
        (mean, var)
    }
}
