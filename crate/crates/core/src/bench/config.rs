use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EtaBounds, Env, GenConfig, PositionModel, Valuation};
use crate::error::{Error, Result};
use crate::higher::HigherConfig;
use crate::lower::LowerConfig;
use crate::pscmdp::{ConstraintSpec, Simulator};

/// Ranking and valuation settings of the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub position_gamma: f64,
    pub valuation: Valuation,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            position_gamma: 0.3,
            valuation: Valuation::PositionEcpm,
            eta_min: 0.0,
            eta_max: 3.0,
        }
    }
}

/// Seeds and run-level sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Seeds swept by multi-seed experiments.
    pub seeds: Vec<u64>,
    pub eval_days: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            seeds: vec![1, 2, 3, 4],
            eval_days: 20,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Everything an experiment needs, loadable from a TOML file with one table
/// per section. Missing keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: GenConfig,
    pub sim: SimConfig,
    pub constraints: ConstraintSpec,
    pub lower: LowerConfig,
    pub higher: HigherConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.constraints.validate()?;
        self.lower.validate()?;
        self.higher.validate()?;
        let s = &self.sim;
        if !(s.position_gamma >= 0.0 && s.position_gamma.is_finite()) {
            return Err(Error::Config("position_gamma must be nonnegative".into()));
        }
        if !(s.eta_min >= 0.0 && s.eta_max > s.eta_min && s.eta_max.is_finite()) {
            return Err(Error::Config("need 0 <= eta_min < eta_max".into()));
        }
        if self.run.eval_days == 0 || self.run.seeds.is_empty() {
            return Err(Error::Config("eval_days and seeds must be nonempty".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }

    pub fn env(&self) -> Result<Env> {
        Ok(Env {
            position: PositionModel::power_law(self.sim.position_gamma, self.env.expose_count)?,
            valuation: self.sim.valuation,
            bounds: EtaBounds {
                min: self.sim.eta_min,
                max: self.sim.eta_max,
            },
        })
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Ok(Simulator::for_generator(self.env()?, &self.env))
    }
}
