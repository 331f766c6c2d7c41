//! Run configuration: data sources, the study grid and metric settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::study::{StudyGrid, StudyOptions};
use crate::toygen::{attach_eval_splits, build_scenario, ScenarioId, ToyParams, ToyScenario};
use crate::types::{CaseRecord, Role};

/// Where study data come from: generated toy scenarios, or manifests of
/// externally prepared cases keyed by scenario name (these take precedence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub scenarios: Vec<ScenarioId>,
    pub master_seed: u64,
    pub toy: ToyParams,
    /// Validation and pool cases appended to each toy scenario.
    pub n_val: usize,
    pub n_pool: usize,
    pub manifests: BTreeMap<String, PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenarios: ScenarioId::ALL.to_vec(),
            master_seed: 0,
            toy: ToyParams::default(),
            n_val: 10,
            n_pool: 20,
            manifests: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub grid: StudyGrid,
    pub options: StudyOptions,
    /// Run directories are created under this path.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            grid: StudyGrid::default(),
            options: StudyOptions::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.data.toy.validate()?;
        if self.options.n_bins == 0 {
            return Err(Error::ConfigInvalid("n_bins must be >= 1".into()));
        }
        if self.data.scenarios.is_empty() && self.data.manifests.is_empty() {
            return Err(Error::ConfigInvalid("no scenarios or manifests configured".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Study inputs keyed by scenario name. Training cases are dropped
    /// except for the first `options.calibration_fallback` when a data set
    /// has no validation cases. `with_pool` adds the unlabeled pool to toy
    /// scenarios.
    pub fn load_datasets(&self, with_pool: bool) -> Result<BTreeMap<String, Vec<CaseRecord>>> {
        let fallback = self.options.calibration_fallback;
        let mut out = BTreeMap::new();
        for &id in &self.data.scenarios {
            if self.data.manifests.contains_key(id.as_str()) {
                continue;
            }
            let mut m = build_scenario(ToyScenario::new(id), self.data.master_seed, &self.data.toy)?;
            attach_eval_splits(&mut m, self.data.n_val, if with_pool { self.data.n_pool } else { 0 });
            let train = if self.data.n_val == 0 { fallback } else { 0 };
            out.insert(id.to_string(), m.study_records(train)?);
        }
        for (name, path) in &self.data.manifests {
            let (m, base) = Manifest::load(path)?;
            let has_val = m.cases.iter().any(|c| c.role == Role::Val);
            let train: Vec<&str> = m
                .cases
                .iter()
                .filter(|c| c.role == Role::Train)
                .take(if has_val { 0 } else { fallback })
                .map(|c| c.case_id.as_str())
                .collect();
            let cases = m.load_cases(&base, |c| c.role != Role::Train || train.contains(&c.case_id.as_str()))?;
            out.insert(name.clone(), cases);
        }
        Ok(out)
    }
}
