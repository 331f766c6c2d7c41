//! Pixel-level uncertainty measures and the model-family semantics table.
//!
//! Entropies are in nats. For a stack of `S >= 2` samples the predictive
//! entropy splits exactly into expected entropy plus mutual information:
//! `PE = EE + MI`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    mean_prediction, Measure, ModelFamily, ProbabilityStack, UncertaintyMap, UncertaintyType,
    NORMALIZATION_TOL,
};

/// Largest negative MI treated as round-off and clamped to zero.
pub const MI_CLAMP: f64 = 1e-12;

/// Shannon entropy in nats of a probability vector, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if p.iter().any(|&x| x < 0.0 || x.is_nan()) {
        return Err(Error::InvalidDistribution(format!("negative entry in {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(entropy_unchecked(p.iter().copied()))
}

#[inline]
pub(crate) fn entropy_unchecked(p: impl Iterator<Item = f64>) -> f64 {
    let h: f64 = p.filter(|&x| x > 0.0).map(|x| -x * x.ln()).sum();
    h.max(0.0)
}

/// PE, EE and MI maps computed in one pass over the stack.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub predictive: Vec<f64>,
    pub expected: Vec<f64>,
    pub mutual_information: Vec<f64>,
}

/// Computes all three entropy-family maps. Requires `S >= 2`.
pub fn decompose(stack: &ProbabilityStack) -> Result<Decomposition> {
    if stack.samples() < 2 {
        return Err(Error::NeedsSampling(stack.samples()));
    }
    let predictive = predictive_entropy_values(stack);
    let expected = expected_entropy_values(stack);
    let mutual_information = predictive
        .iter()
        .zip(&expected)
        .enumerate()
        .map(|(v, (&pe, &ee))| {
            let mi = pe - ee;
            if mi >= 0.0 {
                Ok(mi)
            } else if mi >= -MI_CLAMP {
                Ok(0.0)
            } else {
                Err(Error::InternalConsistency(format!(
                    "negative mutual information {mi:e} at pixel {v}"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Decomposition { predictive, expected, mutual_information })
}

fn predictive_entropy_values(stack: &ProbabilityStack) -> Vec<f64> {
    let mean = mean_prediction(stack);
    let n = stack.pixels();
    let c = stack.classes();
    (0..n)
        .map(|v| entropy_unchecked((0..c).map(|k| mean.probs[k * n + v])))
        .collect()
}

fn expected_entropy_values(stack: &ProbabilityStack) -> Vec<f64> {
    let n = stack.pixels();
    let c = stack.classes();
    let mut acc = vec![0.0; n];
    for s in 0..stack.samples() {
        let field = stack.sample(s);
        for (v, a) in acc.iter_mut().enumerate() {
            *a += entropy_unchecked((0..c).map(|k| field[k * n + v]));
        }
    }
    let inv = 1.0 / stack.samples() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Entropy of the sample-mean distribution. Valid for any `S >= 1`.
pub fn predictive_entropy(stack: &ProbabilityStack) -> UncertaintyMap {
    map(stack, predictive_entropy_values(stack), Measure::Pe, UncertaintyType::Pu)
}

pub fn expected_entropy(stack: &ProbabilityStack) -> Result<UncertaintyMap> {
    if stack.samples() < 2 {
        return Err(Error::NeedsSampling(stack.samples()));
    }
    Ok(map(stack, expected_entropy_values(stack), Measure::Ee, UncertaintyType::Au))
}

pub fn mutual_information(stack: &ProbabilityStack) -> Result<UncertaintyMap> {
    let d = decompose(stack)?;
    Ok(map(stack, d.mutual_information, Measure::Mi, UncertaintyType::Eu))
}

/// `1 - max_c p_c` of a single-sample stack.
pub fn msr_uncertainty(stack: &ProbabilityStack) -> Result<UncertaintyMap> {
    if stack.samples() != 1 {
        return Err(Error::WrongSampleCount(stack.samples()));
    }
    let n = stack.pixels();
    let c = stack.classes();
    let values = (0..n)
        .map(|v| {
            let max = (0..c).map(|k| stack.prob(0, k, v)).fold(0.0, f64::max);
            (1.0 - max).max(0.0)
        })
        .collect();
    Ok(map(stack, values, Measure::OneMinusMsr, UncertaintyType::Pu))
}

fn map(stack: &ProbabilityStack, data: Vec<f64>, measure: Measure, claim: UncertaintyType) -> UncertaintyMap {
    UncertaintyMap { shape: stack.shape().clone(), data, measure, claimed_type: claim }
}

/// Computes `measure` on `stack`. The claimed type defaults to the Bayesian
/// reading; use [`semantics_for`] to relabel for a given family.
pub fn compute_measure(stack: &ProbabilityStack, measure: Measure) -> Result<UncertaintyMap> {
    match measure {
        Measure::Pe => Ok(predictive_entropy(stack)),
        Measure::Ee => expected_entropy(stack),
        Measure::Mi => mutual_information(stack),
        Measure::OneMinusMsr => msr_uncertainty(stack),
    }
}

/// Which measures a prediction model exposes and which uncertainty type
/// each is claimed to capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSemantics {
    pub family: ModelFamily,
    pub mapping: Vec<(Measure, UncertaintyType)>,
}

impl MeasureSemantics {
    pub fn claimed(&self, measure: Measure) -> Option<UncertaintyType> {
        self.mapping.iter().find(|(m, _)| *m == measure).map(|&(_, t)| t)
    }

    /// The measure claimed to capture `kind`, if the family offers one.
    pub fn measure_for(&self, kind: UncertaintyType) -> Option<Measure> {
        self.mapping.iter().find(|(_, t)| *t == kind).map(|&(m, _)| m)
    }
}

/// Weight-sampling models and test-time augmentation read MI as epistemic
/// and EE as aleatoric. A latent label-variability model (SSN) swaps the two:
/// its sampling variable models rater variability, so MI is aleatoric and
/// the remaining expected entropy is epistemic.
pub fn semantics_for(family: ModelFamily) -> MeasureSemantics {
    use Measure::*;
    use UncertaintyType::*;
    let mapping = match family {
        ModelFamily::Deterministic => vec![(OneMinusMsr, Pu)],
        ModelFamily::Ttd | ModelFamily::Ensemble | ModelFamily::Tta => {
            vec![(Pe, Pu), (Mi, Eu), (Ee, Au)]
        }
        ModelFamily::Ssn => vec![(Pe, Pu), (Mi, Au), (Ee, Eu)],
    };
    MeasureSemantics { family, mapping }
}

/// Computes every measure the family exposes, tagged with its claimed type.
pub fn family_maps(stack: &ProbabilityStack, family: ModelFamily) -> Result<Vec<UncertaintyMap>> {
    let sem = semantics_for(family);
    if family == ModelFamily::Deterministic {
        return Ok(vec![msr_uncertainty(stack)?]);
    }
    let d = decompose(stack)?;
    let mut out = Vec::with_capacity(3);
    for &(measure, claim) in &sem.mapping {
        let data = match measure {
            Measure::Pe => d.predictive.clone(),
            Measure::Ee => d.expected.clone(),
            Measure::Mi => d.mutual_information.clone(),
            Measure::OneMinusMsr => unreachable!("sampling families do not expose MSR"),
        };
        out.push(map(stack, data, measure, claim));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Shape;
    use approx::assert_abs_diff_eq;

    fn one_pixel(samples: &[[f64; 2]]) -> ProbabilityStack {
        let data = samples.iter().flat_map(|s| s.iter().copied()).collect();
        ProbabilityStack::new(samples.len(), 2, Shape::new(&[1, 1]).unwrap(), data).unwrap()
    }

    // Reference values evaluated directly from -sum p ln p:
    // H([0.6,0.4]) = 0.673011667..., H([0.8,0.2]) = 0.500402423...
    const H_06: f64 = 0.673_011_667_009_256_5;
    const H_08: f64 = 0.500_402_423_538_187_9;

    #[test]
    fn entropy_worked_values() {
        assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(shannon_entropy(&[0.5, 0.5]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(shannon_entropy(&[0.6, 0.4]).unwrap(), H_06, epsilon = 1e-12);
        assert_abs_diff_eq!(shannon_entropy(&[0.6, 0.4]).unwrap(), 0.673012, epsilon = 5e-7);
    }

    #[test]
    fn entropy_rejects_bad_vectors() {
        assert_eq!(shannon_entropy(&[0.7, 0.7]).unwrap_err().code(), "INVALID_DISTRIBUTION");
        assert_eq!(shannon_entropy(&[-0.1, 1.1]).unwrap_err().code(), "INVALID_DISTRIBUTION");
    }

    #[test]
    fn two_sample_decomposition_by_hand() {
        let s = one_pixel(&[[0.8, 0.2], [0.4, 0.6]]);
        let d = decompose(&s).unwrap();
        assert_abs_diff_eq!(d.predictive[0], H_06, epsilon = 1e-12);
        assert_abs_diff_eq!(d.expected[0], (H_08 + H_06) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.expected[0], 0.586707, epsilon = 5e-7);
        assert_abs_diff_eq!(d.mutual_information[0], H_06 - (H_08 + H_06) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mutual_information[0], 0.086305, epsilon = 5e-7);
    }

    #[test]
    fn full_disagreement_is_epistemic() {
        let s = one_pixel(&[[1.0, 0.0], [0.0, 1.0]]);
        let d = decompose(&s).unwrap();
        assert_abs_diff_eq!(d.predictive[0], std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(d.expected[0], 0.0);
        assert_abs_diff_eq!(d.mutual_information[0], std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn identical_certain_samples_have_no_uncertainty() {
        let s = one_pixel(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let d = decompose(&s).unwrap();
        assert_eq!(d.predictive[0], 0.0);
        assert_eq!(d.expected[0], 0.0);
        assert_eq!(d.mutual_information[0], 0.0);
    }

    #[test]
    fn sampling_measures_need_two_samples() {
        let s = one_pixel(&[[0.3, 0.7]]);
        assert_eq!(expected_entropy(&s).unwrap_err().code(), "NEEDS_SAMPLING");
        assert_eq!(mutual_information(&s).unwrap_err().code(), "NEEDS_SAMPLING");
        assert!(predictive_entropy(&s).data[0] > 0.0);
    }

    #[test]
    fn msr_values() {
        let s = ProbabilityStack::new(
            1,
            2,
            Shape::new(&[1, 2]).unwrap(),
            vec![1.0, 0.5, 0.0, 0.5],
        )
        .unwrap();
        assert_eq!(msr_uncertainty(&s).unwrap().data, vec![0.0, 0.5]);
        let three = ProbabilityStack::new(1, 3, Shape::new(&[1, 1]).unwrap(), vec![0.7, 0.2, 0.1]).unwrap();
        assert_abs_diff_eq!(msr_uncertainty(&three).unwrap().data[0], 0.3, epsilon = 1e-15);
        let two = one_pixel(&[[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(msr_uncertainty(&two).unwrap_err().code(), "WRONG_SAMPLE_COUNT");
    }

    #[test]
    fn semantics_table() {
        use Measure::*;
        use UncertaintyType::*;
        assert_eq!(semantics_for(ModelFamily::Deterministic).mapping, vec![(OneMinusMsr, Pu)]);
        for f in [ModelFamily::Ttd, ModelFamily::Ensemble, ModelFamily::Tta] {
            let s = semantics_for(f);
            assert_eq!(s.mapping, vec![(Pe, Pu), (Mi, Eu), (Ee, Au)]);
        }
        let ssn = semantics_for(ModelFamily::Ssn);
        assert_eq!(ssn.claimed(Ee), Some(Eu));
        assert_eq!(ssn.claimed(Mi), Some(Au));
        assert_eq!(semantics_for(ModelFamily::Tta).claimed(Mi), Some(Eu));
        assert_eq!(ssn.measure_for(Au), Some(Mi));
    }

    #[test]
    fn family_maps_carry_claims() {
        let s = one_pixel(&[[0.8, 0.2], [0.4, 0.6]]);
        let maps = family_maps(&s, ModelFamily::Ssn).unwrap();
        let ee = maps.iter().find(|m| m.measure == Measure::Ee).unwrap();
        assert_eq!(ee.claimed_type, UncertaintyType::Eu);
    }
}
