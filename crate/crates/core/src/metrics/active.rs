use crate::error::{Error, Result};

/// Relative Dice gain between two active-learning cycles, minus the gain of
/// random querying: `C_method - C_random`, `C = (D_t2 - D_t1) / D_t1`.
pub fn al_improvement(dice_t1_method: f64, dice_t2_method: f64, dice_t1_random: f64, dice_t2_random: f64) -> Result<f64> {
    if !(dice_t1_method > 0.0) || !(dice_t1_random > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    let method = (dice_t2_method - dice_t1_method) / dice_t1_method;
    let random = (dice_t2_random - dice_t1_random) / dice_t1_random;
    Ok(method - random)
}
