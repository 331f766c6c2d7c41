//! Uncertainty measures, aggregation strategies and downstream-task metrics
//! for probabilistic segmentation, plus a synthetic toy benchmark and the
//! study harness that evaluates every measure/aggregation/model combination.

pub mod aggregation;
pub mod distance;
pub mod error;
#[cfg(feature = "io")]
pub mod io;
pub mod measures;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod simulate;
pub mod study;
pub mod toygen;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
