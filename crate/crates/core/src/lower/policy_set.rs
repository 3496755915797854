use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyHandle;
use crate::error::{contract, Error, Result};
use crate::neural::{Checkpoint, OptState};

pub const POLICY_SET_VERSION: u32 = 1;

/// The trained request-level policies, indexed by constraint id.
#[derive(Debug, Clone)]
pub struct PolicySet {
    pub policies: Vec<PolicyHandle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySetManifest {
    pub version: u32,
    pub targets: Vec<f64>,
    pub files: Vec<String>,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    constraint_id: usize,
    target: f64,
    actor_lr: f64,
    critic_lr: f64,
    actor: Checkpoint,
    critic: Checkpoint,
}

impl PolicySet {
    pub fn targets(&self) -> Vec<f64> {
        self.policies.iter().map(|p| p.target).collect()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, constraint_id: usize) -> Result<&PolicyHandle> {
        self.policies.get(constraint_id).ok_or_else(|| {
            Error::Config(format!("policy set has no policy for constraint {constraint_id}"))
        })
    }

    /// Checks that the set covers `targets` in order.
    pub fn covers(&self, targets: &[f64]) -> Result<()> {
        if self.targets() != targets {
            return Err(Error::Config(format!(
                "policy set targets {:?} do not match constraint set {:?}",
                self.targets(),
                targets
            )));
        }
        Ok(())
    }
}

/// Writes `policy_<i>.json` per target plus `manifest.json`.
pub fn save_policy_set(set: &PolicySet, dir: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(set.len());
    for p in &set.policies {
        let name = format!("policy_{}.json", p.constraint_id);
        let file = PolicyFile {
            constraint_id: p.constraint_id,
            target: p.target,
            actor_lr: p.actor_opt.lr,
            critic_lr: p.critic_opt.lr,
            actor: Checkpoint::from(&p.actor),
            critic: Checkpoint::from(&p.critic),
        };
        let path = dir.join(&name);
        fs::write(&path, serde_json::to_string(&file)?).map_err(|e| Error::io(&path, e))?;
        files.push(name);
    }
    let manifest = PolicySetManifest {
        version: POLICY_SET_VERSION,
        targets: set.targets(),
        files,
        config_hash: config_hash.to_string(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads a set written by [`save_policy_set`]. Target networks start as copies
/// of the online ones and optimizer moments are fresh.
pub fn load_policy_set(dir: impl AsRef<Path>) -> Result<(PolicySet, PolicySetManifest)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PolicySetManifest = serde_json::from_str(&text)?;
    if manifest.version != POLICY_SET_VERSION {
        return Err(Error::Config(format!(
            "unsupported policy set version {}",
            manifest.version
        )));
    }
    contract!(
        manifest.files.len() == manifest.targets.len(),
        "manifest lists {} files for {} targets",
        manifest.files.len(),
        manifest.targets.len()
    );
    let mut policies = Vec::with_capacity(manifest.files.len());
    for (i, name) in manifest.files.iter().enumerate() {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let f: PolicyFile = serde_json::from_str(&text)?;
        if f.constraint_id != i || f.target != manifest.targets[i] {
            return Err(Error::Config(format!(
                "{} does not match manifest entry {i}",
                path.display()
            )));
        }
        let actor = f.actor.into_params()?;
        let critic = f.critic.into_params()?;
        policies.push(PolicyHandle {
            constraint_id: i,
            target: f.target,
            actor_opt: OptState::new(&actor, f.actor_lr),
            critic_opt: OptState::new(&critic, f.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            updates: 0,
        });
    }
    Ok((PolicySet { policies }, manifest))
}
