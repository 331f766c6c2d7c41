//! Domain types shared by every stage: probability stacks, rater masks,
//! uncertainty maps and case records.
//!
//! Class scores are always post-softmax probabilities. Arrays are stored
//! flat in C order; spatial extents have rank 2 or 3.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on per-pixel probability sums.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Spatial extents of a 2D image or 3D volume.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::ShapeMismatch(format!(
                "spatial rank must be 2 or 3, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero-sized extent in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn cube(edge: usize, rank: usize) -> Result<Self> {
        Shape::new(&vec![edge; rank])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// C-order strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for d in (0..self.0.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.0[d + 1];
        }
        strides
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for d in (0..self.0.len()).rev() {
            idx[d] = flat % self.0[d];
            flat /= self.0[d];
        }
        idx
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(&v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

/// `S` sampled class-probability fields for one case, laid out as
/// `[sample][class][pixel]`.
///
/// The sample axis holds draws of whatever stochastic variable the prediction
/// model integrates over: weights, test-time augmentations, or a latent
/// label-variability variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack {
    samples: usize,
    classes: usize,
    shape: Shape,
    data: Vec<f64>,
}

impl ProbabilityStack {
    /// Builds a stack and validates it. Rows within the normalization
    /// tolerance are renormalized to sum to one exactly.
    pub fn new(samples: usize, classes: usize, shape: Shape, data: Vec<f64>) -> Result<Self> {
        let mut stack = Self::from_raw(samples, classes, shape, data)?;
        validate_stack(&stack)?;
        stack.renormalize();
        Ok(stack)
    }

    /// Builds a stack checking only the buffer length.
    pub fn from_raw(samples: usize, classes: usize, shape: Shape, data: Vec<f64>) -> Result<Self> {
        if samples == 0 {
            return Err(Error::ShapeMismatch("stack needs at least one sample".into()));
        }
        if classes < 2 {
            return Err(Error::ShapeMismatch(format!("need at least 2 classes, got {classes}")));
        }
        let expected = samples * classes * shape.len();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "buffer holds {} values, expected {expected} ({samples}x{classes}x{:?})",
                data.len(),
                shape.dims()
            )));
        }
        Ok(ProbabilityStack { samples, classes, shape, data })
    }

    /// Binary stack from per-sample foreground probabilities `[sample][pixel]`.
    pub fn from_foreground(samples: usize, shape: Shape, foreground: &[f64]) -> Result<Self> {
        let n = shape.len();
        if foreground.len() != samples * n {
            return Err(Error::ShapeMismatch(format!(
                "foreground buffer holds {} values, expected {}",
                foreground.len(),
                samples * n
            )));
        }
        let mut data = vec![0.0; samples * 2 * n];
        for s in 0..samples {
            let fg = &foreground[s * n..(s + 1) * n];
            let base = s * 2 * n;
            for (v, &q) in fg.iter().enumerate() {
                data[base + v] = 1.0 - q;
                data[base + n + v] = q;
            }
        }
        ProbabilityStack::new(samples, 2, shape, data)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn pixels(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn prob(&self, sample: usize, class: usize, pixel: usize) -> f64 {
        self.data[(sample * self.classes + class) * self.pixels() + pixel]
    }

    /// Class-probability field of one sample, `[class][pixel]`.
    pub fn sample(&self, sample: usize) -> &[f64] {
        let block = self.classes * self.pixels();
        &self.data[sample * block..(sample + 1) * block]
    }

    /// Argmax label map of a single sample.
    pub fn sample_argmax(&self, sample: usize) -> Vec<u8> {
        argmax_field(self.sample(sample), self.classes, self.pixels())
    }

    fn renormalize(&mut self) {
        let n = self.pixels();
        for s in 0..self.samples {
            for v in 0..n {
                let sum: f64 = (0..self.classes).map(|c| self.prob(s, c, v)).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    for c in 0..self.classes {
                        self.data[(s * self.classes + c) * n + v] /= sum;
                    }
                }
            }
        }
    }
}

/// Checks every [`ProbabilityStack`] invariant, reporting the first violation.
pub fn validate_stack(stack: &ProbabilityStack) -> Result<()> {
    let n = stack.pixels();
    if stack.data.len() != stack.samples * stack.classes * n {
        return Err(Error::ShapeMismatch("buffer length disagrees with extents".into()));
    }
    if let Some((index, &value)) = stack
        .data
        .iter()
        .enumerate()
        .find(|(_, &p)| p < 0.0 || p.is_nan())
    {
        return Err(Error::NegativeProbability { index, value });
    }
    for s in 0..stack.samples {
        for v in 0..n {
            let sum: f64 = (0..stack.classes).map(|c| stack.prob(s, c, v)).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::RowNotNormalized { sample: s, pixel: v, sum });
            }
        }
    }
    Ok(())
}

/// Sample-mean class probabilities `[class][pixel]` and their argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPrediction {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

pub fn mean_prediction(stack: &ProbabilityStack) -> MeanPrediction {
    let block = stack.classes * stack.pixels();
    let mut probs = vec![0.0; block];
    for s in 0..stack.samples {
        for (acc, &p) in probs.iter_mut().zip(stack.sample(s)) {
            *acc += p;
        }
    }
    let inv = 1.0 / stack.samples as f64;
    probs.iter_mut().for_each(|p| *p *= inv);
    let labels = argmax_field(&probs, stack.classes, stack.pixels());
    MeanPrediction { probs, labels, classes: stack.classes }
}

/// Per-pixel argmax of a `[class][pixel]` field; ties go to the lowest class.
pub fn argmax_field(field: &[f64], classes: usize, pixels: usize) -> Vec<u8> {
    (0..pixels)
        .map(|v| {
            let mut best = 0;
            let mut best_p = field[v];
            for c in 1..classes {
                let p = field[c * pixels + v];
                if p > best_p {
                    best = c;
                    best_p = p;
                }
            }
            best as u8
        })
        .collect()
}

/// Reference masks from `R` raters, `[rater][pixel]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterSet {
    shape: Shape,
    masks: Vec<Vec<u8>>,
}

impl RaterSet {
    pub fn new(shape: Shape, masks: Vec<Vec<u8>>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::NeedsRaters { needed: 1, got: 0 });
        }
        let n = shape.len();
        if let Some(bad) = masks.iter().position(|m| m.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "rater {bad} mask has {} pixels, expected {n}",
                masks[bad].len()
            )));
        }
        Ok(RaterSet { shape, masks })
    }

    /// Checks all labels are below `classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        for m in &self.masks {
            if let Some(&bad) = m.iter().find(|&&l| l as usize >= classes) {
                return Err(Error::UnknownClass { class: bad as usize, classes });
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn raters(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[Vec<u8>] {
        &self.masks
    }

    pub fn mask(&self, rater: usize) -> &[u8] {
        &self.masks[rater]
    }

    /// Fraction of raters labelling each pixel as `positive_class`.
    pub fn mean_indicator(&self, positive_class: u8) -> Vec<f64> {
        let n = self.shape.len();
        let mut mean = vec![0.0; n];
        for m in &self.masks {
            for (acc, &l) in mean.iter_mut().zip(m) {
                if l == positive_class {
                    *acc += 1.0;
                }
            }
        }
        let inv = 1.0 / self.masks.len() as f64;
        mean.iter_mut().for_each(|x| *x *= inv);
        mean
    }

    /// Majority-vote binary mask (ties count as positive).
    pub fn majority(&self, positive_class: u8) -> Vec<u8> {
        self.mean_indicator(positive_class)
            .into_iter()
            .map(|f| u8::from(f >= 0.5))
            .collect()
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ::serde::Serialize, ::serde::Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> $crate::error::Result<Self> {
                let up = s.trim().to_ascii_uppercase().replace('-', "_");
                $(if up == $text { return Ok($name::$variant); })+
                Err($crate::error::Error::Parse(format!(concat!("unknown ", stringify!($name), " '{}'"), s)))
            }
        }
    };
}
pub(crate) use string_enum;

string_enum!(
    /// Pixel-level uncertainty measure.
    Measure {
        Pe => "PE",
        Ee => "EE",
        Mi => "MI",
        OneMinusMsr => "ONE_MINUS_MSR",
    }
);

string_enum!(
    /// Which uncertainty type a measure is claimed to capture.
    UncertaintyType {
        Pu => "PU",
        Au => "AU",
        Eu => "EU",
    }
);

string_enum!(
    /// Prediction model producing the sample axis.
    ModelFamily {
        Deterministic => "DETERMINISTIC",
        Ttd => "TTD",
        Ensemble => "ENSEMBLE",
        Tta => "TTA",
        Ssn => "SSN",
    }
);

string_enum!(
    Split {
        Iid => "IID",
        Ood => "OOD",
    }
);

string_enum!(
    Role {
        Train => "TRAIN",
        Val => "VAL",
        Test => "TEST",
        Pool => "POOL",
    }
);

/// Scalar uncertainty per pixel, tagged with the measure that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub shape: Shape,
    pub data: Vec<f64>,
    pub measure: Measure,
    pub claimed_type: UncertaintyType,
}

impl UncertaintyMap {
    pub fn new(shape: Shape, data: Vec<f64>, measure: Measure, claimed_type: UncertaintyType) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "map holds {} values, shape needs {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(UncertaintyMap { shape, data, measure, claimed_type })
    }

    /// Upper bound of the measure for `classes` classes.
    pub fn upper_bound(measure: Measure, classes: usize) -> f64 {
        match measure {
            Measure::OneMinusMsr => 1.0 - 1.0 / classes as f64,
            _ => (classes as f64).ln(),
        }
    }

    pub fn with_claim(mut self, claimed_type: UncertaintyType) -> Self {
        self.claimed_type = claimed_type;
        self
    }
}

/// One evaluation case. `stack` is absent for generated stubs that have not
/// been run through a prediction model yet.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub split: Split,
    pub role: Role,
    pub stack: Option<ProbabilityStack>,
    pub raters: RaterSet,
    pub scenario_tags: Vec<String>,
}

impl CaseRecord {
    pub fn check_consistency(&self) -> Result<()> {
        if let Some(stack) = &self.stack {
            if stack.shape() != self.raters.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "case {}: stack shape {:?} vs raters {:?}",
                    self.case_id,
                    stack.shape().dims(),
                    self.raters.shape().dims()
                )));
            }
            self.raters.check_classes(stack.classes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape2(a: usize, b: usize) -> Shape {
        Shape::new(&[a, b]).unwrap()
    }

    #[test]
    fn uniform_stack_is_valid() {
        let s = ProbabilityStack::new(2, 2, shape2(2, 2), vec![0.5; 16]).unwrap();
        assert!(validate_stack(&s).is_ok());
    }

    #[test]
    fn unnormalized_row_is_rejected() {
        let mut data = vec![0.5; 8];
        data[1] = 0.7;
        data[5] = 0.7;
        let err = ProbabilityStack::new(1, 2, shape2(2, 2), data).unwrap_err();
        assert_eq!(err.code(), "ROW_NOT_NORMALIZED");
        match err {
            Error::RowNotNormalized { sample, pixel, sum } => {
                assert_eq!((sample, pixel), (0, 1));
                assert!((sum - 1.4).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn negative_value_is_rejected() {
        let mut data = vec![0.5; 8];
        data[2] = -0.1;
        data[6] = 1.1;
        let err = ProbabilityStack::new(1, 2, shape2(2, 2), data).unwrap_err();
        assert_eq!(err.code(), "NEGATIVE_PROBABILITY");
    }

    #[test]
    fn wrong_buffer_length_is_shape_mismatch() {
        let err = ProbabilityStack::new(1, 2, shape2(2, 2), vec![0.5; 7]).unwrap_err();
        assert_eq!(err.code(), "SHAPE_MISMATCH");
        assert_eq!(Shape::new(&[4]).unwrap_err().code(), "SHAPE_MISMATCH");
    }

    #[test]
    fn tiny_deviation_is_renormalized() {
        let s = ProbabilityStack::new(1, 2, shape2(1, 1), vec![0.6, 0.4 + 5e-7]).unwrap();
        let sum: f64 = s.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_of_single_sample_is_identity() {
        let data = vec![0.9, 0.3, 0.1, 0.7];
        let s = ProbabilityStack::new(1, 2, shape2(1, 2), data.clone()).unwrap();
        let m = mean_prediction(&s);
        assert_eq!(m.probs, data);
        assert_eq!(m.labels, vec![0, 1]);
    }

    #[test]
    fn mean_of_two_samples_by_hand() {
        // samples [0.8,0.2] and [0.4,0.6] at one pixel
        let s = ProbabilityStack::new(2, 2, shape2(1, 1), vec![0.8, 0.2, 0.4, 0.6]).unwrap();
        let m = mean_prediction(&s);
        assert!((m.probs[0] - 0.6).abs() < 1e-12);
        assert!((m.probs[1] - 0.4).abs() < 1e-12);
        assert_eq!(m.labels, vec![0]);
    }

    #[test]
    fn argmax_tie_goes_to_lowest_class() {
        let s = ProbabilityStack::new(1, 2, shape2(1, 1), vec![0.5, 0.5]).unwrap();
        assert_eq!(mean_prediction(&s).labels, vec![0]);
        let t = ProbabilityStack::new(1, 3, shape2(1, 1), vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(mean_prediction(&t).labels, vec![1]);
    }

    #[test]
    fn rater_labels_checked_against_classes() {
        let r = RaterSet::new(shape2(1, 3), vec![vec![0, 1, 2]]).unwrap();
        assert!(r.check_classes(3).is_ok());
        assert_eq!(r.check_classes(2).unwrap_err().code(), "UNKNOWN_CLASS");
        assert!(RaterSet::new(shape2(1, 3), vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn enums_parse_case_insensitively() {
        assert_eq!("ttd".parse::<ModelFamily>().unwrap(), ModelFamily::Ttd);
        assert_eq!("one-minus-msr".parse::<Measure>().unwrap(), Measure::OneMinusMsr);
        assert!("xx".parse::<Split>().is_err());
    }

    #[test]
    fn unravel_matches_strides() {
        let s = Shape::new(&[3, 4, 5]).unwrap();
        assert_eq!(s.strides(), vec![20, 5, 1]);
        assert_eq!(s.unravel(2 * 20 + 3 * 5 + 4), [2, 3, 4]);
    }
}
