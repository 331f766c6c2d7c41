//! File formats: NPY arrays, case manifests, run configs and reports.

pub mod config;
pub mod manifest;
pub mod npy;
pub mod report;

pub use config::{DataConfig, RunConfig};
pub use manifest::{Manifest, ManifestCase, MANIFEST_FILE};
pub use report::{create_run_dir, render_report};
