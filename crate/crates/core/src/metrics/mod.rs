//! Downstream-task metrics: segmentation quality, OoD detection, failure
//! detection, calibration, ambiguity modelling and active learning.

mod active;
mod ambiguity;
mod calibration;
mod ranking;
mod segmentation;

pub use active::al_improvement;
pub use ambiguity::{
    ged, ged_with, ncc, rater_variance_map, Correlation, GedOptions, GedResult, VarianceMap,
    GED_ENUMERATION_CAP, GED_MC_DRAWS,
};
pub use calibration::{
    ace, platt_scale, AceAccumulator, platt_scale_subsampled, AceResult, CalibrationBin, PlattFit, DEFAULT_ACE_BINS,
    PLATT_MAX_PIXELS,
};
pub use ranking::{aurc, auroc, e_aurc, risk_coverage_curve, RiskCoveragePoint};
pub use segmentation::{dice, mean_rater_dice};

use crate::error::{Error, Result};

pub(crate) fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} entries")));
    }
    Ok(())
}
