use serde::{Deserialize, Serialize};

use super::check_aligned;
use crate::error::{Error, Result};

/// Area under the ROC curve in Mann-Whitney form: the probability that a
/// random positive scores above a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores.len(), labels.len(), "auroc")?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidDistribution("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, with tied groups sharing their mean rank
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_rank = (i + 1 + j + 1) as u64;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_rank * positives;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub selective_risk: f64,
}

/// Risk-coverage curve with one point per distinct confidence value.
///
/// Cases are accepted in order of descending confidence; tied confidences
/// enter together. Points are ordered by descending coverage, starting at
/// full coverage, and end with a zero-coverage anchor that carries the risk
/// of the most confident group forward.
pub fn risk_coverage_curve(confidences: &[f64], risks: &[f64]) -> Result<Vec<RiskCoveragePoint>> {
    check_aligned(confidences.len(), risks.len(), "aurc")?;
    if confidences.is_empty() {
        return Err(Error::EmptyInput);
    }
    if confidences.iter().chain(risks).any(|x| !x.is_finite()) {
        return Err(Error::InvalidDistribution("non-finite confidence or risk".into()));
    }
    let n = confidences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let mut points = Vec::new();
    let mut cum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        cum += risks[order[i]];
        while j + 1 < n && confidences[order[j + 1]] == confidences[order[i]] {
            j += 1;
            cum += risks[order[j]];
        }
        let k = j + 1;
        points.push(RiskCoveragePoint { coverage: k as f64 / n as f64, selective_risk: cum / k as f64 });
        i = k;
    }
    let top_risk = points[0].selective_risk;
    points.reverse();
    points.push(RiskCoveragePoint { coverage: 0.0, selective_risk: top_risk });
    Ok(points)
}

/// Area under the risk-coverage curve by the trapezoidal rule.
pub fn aurc(confidences: &[f64], risks: &[f64]) -> Result<f64> {
    let curve = risk_coverage_curve(confidences, risks)?;
    Ok(trapezoid(&curve))
}

fn trapezoid(curve: &[RiskCoveragePoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[0].coverage - w[1].coverage) * (w[0].selective_risk + w[1].selective_risk) / 2.0)
        .sum()
}

/// AURC in excess of the oracle ranking that orders cases by ascending risk.
pub fn e_aurc(confidences: &[f64], risks: &[f64]) -> Result<f64> {
    let actual = aurc(confidences, risks)?;
    let oracle: Vec<f64> = risks.iter().map(|r| -r).collect();
    Ok(actual - aurc(&oracle, risks)?)
}
