//! Run configuration shared by the command-line tool and the tests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{load_feeder, FeederModel};
use crate::profiles::{load_profiles, ScenarioProfiles};
use crate::qsts::SimulationConfig;
use crate::scenario::{generate_synthetic_scenario, ScenarioOptions};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub feeder: PathBuf,
    /// Profile CSV; when absent a synthetic day is generated from `scenario`.
    pub profiles: Option<PathBuf>,
    pub scenario: ScenarioOptions,
    pub simulation: SimulationConfig,
}

/// Feeder and profiles ready for simulation.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub model: FeederModel,
    pub profiles: ScenarioProfiles,
    pub scenario_id: String,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Makes referenced paths absolute so the snapshot works from anywhere.
    pub fn absolutize(&mut self) {
        let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        self.feeder = abs(&self.feeder);
        if let Some(p) = &self.profiles {
            self.profiles = Some(abs(p));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feeder.as_os_str().is_empty() {
            return Err(Error::Config("no feeder given".into()));
        }
        for p in std::iter::once(&self.feeder).chain(self.profiles.iter()) {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                ));
            }
        }
        self.simulation.validate()
    }

    pub fn prepare(&self) -> Result<PreparedRun> {
        self.validate()?;
        let model = load_feeder(&self.feeder)?;
        match &self.profiles {
            Some(path) => {
                let profiles = load_profiles(path, &model)?;
                let scenario_id = path.file_stem().map_or_else(
                    || "profiles".to_string(),
                    |s| s.to_string_lossy().into_owned(),
                );
                Ok(PreparedRun {
                    model,
                    profiles,
                    scenario_id,
                })
            }
            None => {
                let s = generate_synthetic_scenario(&model, &self.scenario)?;
                Ok(PreparedRun {
                    model: s.model,
                    profiles: s.profiles,
                    scenario_id: format!(
                        "{}-pv{}-seed{}",
                        model.name, self.scenario.penetration_pct, self.scenario.seed
                    ),
                })
            }
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))
    }
}
