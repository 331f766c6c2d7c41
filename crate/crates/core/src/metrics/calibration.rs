use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_aligned;
use crate::error::{Error, Result};

pub const DEFAULT_ACE_BINS: usize = 10;
/// Pixel budget for fitting Platt scaling.
pub const PLATT_MAX_PIXELS: usize = 1_000_000;

const PLATT_TOL: f64 = 1e-8;
const PLATT_MAX_ITER: usize = 100;
/// Bound on the standardized logistic parameters; reached only when the
/// data are (nearly) separable and the likelihood has no finite maximum.
const PLATT_PARAM_CAP: f64 = 50.0;
const SEPARATED_LOSS: f64 = 1e-9;

/// Logistic map `P(correct) = sigmoid(a * score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    /// Set when the fit hit the parameter cap (CONVERGENCE_CAPPED).
    pub capped: bool,
}

impl PlattFit {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
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

/// Maximum-likelihood Platt scaling by damped Newton iteration.
///
/// Scores are standardized before fitting and the parameters mapped back.
pub fn platt_scale(scores: &[f64], correct: &[bool]) -> Result<PlattFit> {
    check_aligned(scores.len(), correct.len(), "platt_scale")?;
    let n = scores.len();
    let n_pos = correct.iter().filter(|&&c| c).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if !(sd > 1e-300) {
        let rate = n_pos as f64 / n as f64;
        return Ok(PlattFit { a: 0.0, b: (rate / (1.0 - rate)).ln(), iterations: 0, capped: false });
    }
    let z: Vec<f64> = scores.iter().map(|s| (s - mean) / sd).collect();
    let y: Vec<f64> = correct.iter().map(|&c| f64::from(u8::from(c))).collect();

    let nll = |a: f64, b: f64| -> f64 {
        z.iter()
            .zip(&y)
            .map(|(&zi, &yi)| {
                let t = a * zi + b;
                // log(1 + e^t) - y t, computed stably
                let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                softplus - yi * t
            })
            .sum()
    };

    let rate = n_pos as f64 / n as f64;
    let (mut a, mut b) = (0.0, (rate / (1.0 - rate)).ln());
    let mut f = nll(a, b);
    for iter in 1..=PLATT_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(&y) {
            let p = sigmoid(a * zi + b);
            let r = p - yi;
            let w = p * (1.0 - p);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        // small ridge keeps the system solvable when weights underflow
        let ridge = 1e-12 * (haa + hbb).max(1.0);
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = nll(na, nb);
            if nf <= f {
                a = na;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        let moved = (step * da).abs().max((step * db).abs());
        // a vanishing loss means the data are separable and the parameters
        // would diverge
        let separated = f < SEPARATED_LOSS * n as f64;
        if separated || a.abs() > PLATT_PARAM_CAP || b.abs() > PLATT_PARAM_CAP {
            let scale = PLATT_PARAM_CAP / a.abs().max(b.abs());
            let (a_c, b_c) = (a * scale, b * scale);
            return Ok(unstandardize(a_c, b_c, mean, sd, iter, true));
        }
        if !accepted || moved < PLATT_TOL {
            return Ok(unstandardize(a, b, mean, sd, iter, false));
        }
    }
    Err(Error::NoConvergence(PLATT_MAX_ITER))
}

fn unstandardize(a: f64, b: f64, mean: f64, sd: f64, iterations: usize, capped: bool) -> PlattFit {
    PlattFit { a: a / sd, b: b - a * mean / sd, iterations, capped }
}

/// Platt scaling on at most `max_points` entries drawn without replacement
/// by a seeded generator. All entries are used when within budget.
pub fn platt_scale_subsampled(scores: &[f64], correct: &[bool], max_points: usize, seed: u64) -> Result<PlattFit> {
    check_aligned(scores.len(), correct.len(), "platt_scale")?;
    if scores.len() <= max_points {
        return platt_scale(scores, correct);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, scores.len(), max_points).into_vec();
    idx.sort_unstable();
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let c: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
    platt_scale(&s, &c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceResult {
    pub ace: f64,
    /// Non-empty bins only.
    pub bins: Vec<CalibrationBin>,
}

/// Running bin statistics for ACE over pixel sets too large to hold.
#[derive(Debug, Clone, PartialEq)]
pub struct AceAccumulator {
    conf_sum: Vec<f64>,
    hits: Vec<usize>,
    counts: Vec<usize>,
}

impl AceAccumulator {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::ConfigInvalid("n_bins must be >= 1".into()));
        }
        Ok(AceAccumulator { conf_sum: vec![0.0; n_bins], hits: vec![0; n_bins], counts: vec![0; n_bins] })
    }

    pub fn push(&mut self, confidence: f64, correct: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidDistribution(format!("confidence {confidence} outside [0, 1]")));
        }
        let n_bins = self.counts.len();
        let bin = ((confidence * n_bins as f64) as usize).min(n_bins - 1);
        self.conf_sum[bin] += confidence;
        self.counts[bin] += 1;
        self.hits[bin] += usize::from(correct);
        Ok(())
    }

    pub fn merge(&mut self, other: &AceAccumulator) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::ShapeMismatch("ACE accumulators use different bin counts".into()));
        }
        for m in 0..self.counts.len() {
            self.conf_sum[m] += other.conf_sum[m];
            self.hits[m] += other.hits[m];
            self.counts[m] += other.counts[m];
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<AceResult> {
        let n_bins = self.counts.len();
        let bins: Vec<CalibrationBin> = (0..n_bins)
            .filter(|&m| self.counts[m] > 0)
            .map(|m| CalibrationBin {
                lower: m as f64 / n_bins as f64,
                upper: (m + 1) as f64 / n_bins as f64,
                mean_confidence: self.conf_sum[m] / self.counts[m] as f64,
                accuracy: self.hits[m] as f64 / self.counts[m] as f64,
                count: self.counts[m],
            })
            .collect();
        if bins.is_empty() {
            return Err(Error::EmptyInput);
        }
        let ace = bins.iter().map(|b| (b.mean_confidence - b.accuracy).abs()).sum::<f64>() / bins.len() as f64;
        Ok(AceResult { ace, bins })
    }
}

/// Average calibration error over `n_bins` equal-width confidence bins,
/// each non-empty bin weighted equally.
pub fn ace(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<AceResult> {
    check_aligned(confidences.len(), correct.len(), "ace")?;
    if confidences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = AceAccumulator::new(n_bins)?;
    for (&c, &ok) in confidences.iter().zip(correct) {
        acc.push(c, ok)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ace_single_bin_half_correct() {
        let r = ace(&[1.0; 4], &[true, false, true, false], 10).unwrap();
        assert_eq!(r.ace, 0.5);
        assert_eq!(r.bins.len(), 1);
    }

    #[test]
    fn ace_two_bins_by_hand() {
        // bin [0.2,0.3): 5 pixels at 0.2, one correct; bin [0.9,1): 10 at 0.9, 7 correct
        let mut conf = vec![0.2; 5];
        let mut ok = vec![true, false, false, false, false];
        conf.extend(vec![0.9; 10]);
        ok.extend((0..10).map(|i| i < 7));
        let r = ace(&conf, &ok, 10).unwrap();
        assert!((r.ace - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ace_errors() {
        assert_eq!(ace(&[], &[], 10).unwrap_err().code(), "EMPTY_INPUT");
        assert!(ace(&[1.2], &[true], 10).is_err());
    }

    #[test]
    fn platt_two_group_closed_form() {
        // score 0 group: 30% correct, score 1 group: 80% correct; two distinct
        // score values make the logistic model saturated, so the MLE
        // reproduces the group means exactly
        let mut s = Vec::new();
        let mut c = Vec::new();
        for i in 0..100 {
            s.push(0.0);
            c.push(i < 30);
            s.push(1.0);
            c.push(i < 80);
        }
        let fit = platt_scale(&s, &c).unwrap();
        assert!(!fit.capped);
        assert!((fit.apply(0.0) - 0.3).abs() < 1e-3);
        assert!((fit.apply(1.0) - 0.8).abs() < 1e-3);
    }

    #[test]
    fn platt_independent_labels_give_base_rate() {
        // each score value carries the same 25% success rate
        let mut s = Vec::new();
        let mut c = Vec::new();
        for v in 0..10 {
            for k in 0..8 {
                s.push(v as f64);
                c.push(k < 2);
            }
        }
        let fit = platt_scale(&s, &c).unwrap();
        assert!(fit.a.abs() < 1e-6);
        assert!((fit.apply(3.0) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn platt_separable_is_capped() {
        let s = [0.0, 0.1, 0.2, 0.8, 0.9, 1.0];
        let c = [false, false, false, true, true, true];
        let fit = platt_scale(&s, &c).unwrap();
        assert!(fit.capped);
        assert!(fit.apply(1.0) > 0.99 && fit.apply(0.0) < 0.01);
    }

    #[test]
    fn platt_single_class() {
        assert_eq!(platt_scale(&[0.1, 0.2], &[true, true]).unwrap_err().code(), "SINGLE_CLASS");
    }

    #[test]
    fn subsampling_is_seeded() {
        let s: Vec<f64> = (0..500).map(|i| (i % 17) as f64 / 17.0).collect();
        let c: Vec<bool> = (0..500).map(|i| (i * 7) % 5 < 3).collect();
        let a = platt_scale_subsampled(&s, &c, 100, 3).unwrap();
        let b = platt_scale_subsampled(&s, &c, 100, 3).unwrap();
        assert_eq!(a, b);
    }
}
