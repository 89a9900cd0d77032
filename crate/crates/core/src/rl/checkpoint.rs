//! Policy checkpoints as self-describing JSON.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rl::observation::OBS_SCHEMA;
use crate::rl::policy::PolicyParams;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "dcmstep-policy";

/// Hex SHA-256 of the observation layout, so a checkpoint trained against a
/// different layout is refused.
pub fn obs_schema_hash() -> String {
    hex(&Sha256::digest(OBS_SCHEMA.as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub obs_schema_hash: String,
    pub actor_sizes: Vec<usize>,
    pub critic_sizes: Vec<usize>,
    /// One tag per layer, e.g. `["tanh", "tanh", "linear"]`.
    pub activations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Anything the trainer wants to record (config, seed, wall time).
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub params: PolicyParams,
}

fn activations(n_layers: usize) -> Vec<String> {
    (0..n_layers)
        .map(|i| if i + 1 == n_layers { "linear" } else { "tanh" }.to_string())
        .collect()
}

impl Checkpoint {
    pub fn new(params: PolicyParams, metadata: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                obs_schema_hash: obs_schema_hash(),
                actor_sizes: params.actor.sizes(),
                critic_sizes: params.critic.sizes(),
                activations: activations(params.actor.layers.len()),
            },
            metadata,
            params,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    /// Reads and validates a checkpoint.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(r)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                expected: format!("{CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"),
                found: format!("{} v{}", h.format, h.version),
            });
        }
        if h.obs_schema_hash != obs_schema_hash() {
            return Err(Error::SchemaVersion {
                expected: format!("observation schema {}", obs_schema_hash()),
                found: format!("observation schema {}", h.obs_schema_hash),
            });
        }
        let p = &self.params;
        let ok = p.layers_consistent()
            && h.actor_sizes == p.actor.sizes()
            && h.critic_sizes == p.critic.sizes()
            && h.activations == activations(p.actor.layers.len())
            && p.actor.sizes().first() == Some(&p.obs_dim())
            && p.critic.sizes().first() == Some(&p.obs_dim())
            && p.actor.sizes().last() == Some(&p.act_dim())
            && p.critic.sizes().last() == Some(&1)
            && p.log_std.len() == p.act_dim();
        if !ok {
            return Err(Error::Config("checkpoint header does not match its parameters".into()));
        }
        if !p.is_finite() {
            return Err(Error::Config("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }
}
