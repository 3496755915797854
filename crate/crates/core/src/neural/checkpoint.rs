use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetSpec, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: layout plus flattened parameters. Floats are written in
/// shortest round-trip form, so save/load is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetSpec,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl From<&Params> for Checkpoint {
    fn from(p: &Params) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: p.spec.clone(),
            seed: p.seed,
            values: p.values.clone(),
        }
    }
}

impl Checkpoint {
    pub fn into_params(self) -> Result<Params> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        Params::from_values(self.spec, self.seed, self.values)
    }
}

pub fn save_checkpoint(params: &Params, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from(params))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Params> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<Checkpoint>(&text)?.into_params()
}
