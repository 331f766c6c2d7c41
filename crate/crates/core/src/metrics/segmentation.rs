use crate::error::{Error, Result};
use crate::types::{mean_prediction, ProbabilityStack, RaterSet};

/// Binary Dice `2TP / (2TP + FP + FN)` on `positive_class`. Two empty masks
/// score 1.
pub fn dice(pred: &[u8], reference: &[u8], positive_class: u8) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} pixels, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.iter().zip(reference) {
        match (p == positive_class, r == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { (2 * tp) as f64 / denom as f64 })
}

/// Average Dice between the mean-prediction argmax and each rater.
pub fn mean_rater_dice(stack: &ProbabilityStack, raters: &RaterSet, positive_class: u8) -> Result<f64> {
    if stack.shape() != raters.shape() {
        return Err(Error::ShapeMismatch("stack and raters differ in shape".into()));
    }
    let pred = mean_prediction(stack).labels;
    let mut total = 0.0;
    for mask in raters.masks() {
        total += dice(&pred, mask, positive_class)?;
    }
    Ok(total / raters.raters() as f64)
}
