//! Versioned JSON manifests listing cases and their NPY arrays. Paths are
//! relative to the manifest's directory.
//!
//! Array layouts: image `[dims..]` float64, raters `[R, dims..]` uint8,
//! stack `[S, C, dims..]` float64.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy;
use crate::error::{Error, Result};
use crate::parallel;
use crate::types::{CaseRecord, ProbabilityStack, RaterSet, Role, Shape, Split};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub case_id: String,
    pub split: Split,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<PathBuf>,
    pub raters: PathBuf,
    #[serde(default)]
    pub scenario_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub cases: Vec<ManifestCase>,
}

impl Manifest {
    pub fn new(dataset: impl Into<String>) -> Self {
        Manifest { format_version: MANIFEST_FORMAT_VERSION, dataset: dataset.into(), cases: Vec::new() }
    }

    /// Checks the version, id uniqueness and that referenced files exist
    /// relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "manifest format_version {} not recognized (expected {MANIFEST_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.cases {
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::Parse(format!("duplicate case_id '{}'", c.case_id)));
            }
        }
        for c in &self.cases {
            for p in [Some(&c.raters), c.image.as_ref(), c.stack.as_ref()].into_iter().flatten() {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(Error::io(&full, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced array missing")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(&base)?;
        Ok((m, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads the cases accepted by `keep`, in manifest order.
    pub fn load_cases(&self, base: &Path, keep: impl Fn(&ManifestCase) -> bool) -> Result<Vec<CaseRecord>> {
        let picked: Vec<&ManifestCase> = self.cases.iter().filter(|c| keep(c)).collect();
        parallel::try_map(&picked, |c| load_case(base, c))
    }
}

pub fn read_raters(path: &Path) -> Result<RaterSet> {
    let (dims, data) = npy::read_array(path)?.into_u8()?;
    if dims.len() < 3 {
        return Err(Error::ShapeMismatch(format!("{}: rater array needs [R, dims..], got {dims:?}", path.display())));
    }
    let shape = Shape::new(&dims[1..])?;
    let masks = data.chunks(shape.len()).map(<[u8]>::to_vec).collect();
    RaterSet::new(shape, masks)
}

pub fn read_stack(path: &Path) -> Result<ProbabilityStack> {
    let (dims, data) = npy::read_array(path)?.into_f64()?;
    if dims.len() < 4 {
        return Err(Error::ShapeMismatch(format!("{}: stack array needs [S, C, dims..], got {dims:?}", path.display())));
    }
    ProbabilityStack::new(dims[0], dims[1], Shape::new(&dims[2..])?, data)
}

pub fn read_image(path: &Path) -> Result<(Shape, Vec<f64>)> {
    let (dims, data) = npy::read_array(path)?.into_f64()?;
    Ok((Shape::new(&dims)?, data))
}

pub fn load_case(base: &Path, c: &ManifestCase) -> Result<CaseRecord> {
    let raters = read_raters(&base.join(&c.raters))?;
    let stack = c.stack.as_ref().map(|p| read_stack(&base.join(p))).transpose()?;
    let record = CaseRecord {
        case_id: c.case_id.clone(),
        split: c.split,
        role: c.role,
        stack,
        raters,
        scenario_tags: c.scenario_tags.clone(),
    };
    record.check_consistency()?;
    Ok(record)
}

pub fn write_raters(path: &Path, raters: &RaterSet) -> Result<()> {
    let mut dims = vec![raters.raters()];
    dims.extend_from_slice(raters.shape().dims());
    let flat: Vec<u8> = raters.masks().concat();
    npy::write_u8(path, &dims, &flat)
}

pub fn write_stack(path: &Path, stack: &ProbabilityStack) -> Result<()> {
    let mut dims = vec![stack.samples(), stack.classes()];
    dims.extend_from_slice(stack.shape().dims());
    npy::write_f64(path, &dims, stack.data())
}

pub fn write_image(path: &Path, shape: &Shape, data: &[f64]) -> Result<()> {
    npy::write_f64(path, shape.dims(), data)
}
