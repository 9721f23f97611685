//! Single-file run checkpoints.
//!
//! A checkpoint captures everything a resume needs to continue bit-for-bit:
//! config, registry with payloads, memory texts, trial history, RNG state,
//! and the agent/policy cursors. Checkpoints are written at step boundaries
//! only, so no selection is ever in flight.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::memory::{MemoryState, TrialRecord};
use crate::registry::Registry;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write checkpoint {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {source}")]
    Corrupt {
        path: String,
        source: serde_json::Error,
    },
    #[error("checkpoint version {found} does not match supported version {expected}")]
    VersionMismatch { found: u64, expected: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    /// Directory relative paths resolved against when the run started.
    pub base_dir: Option<PathBuf>,
    pub step: u32,
    pub registry: Registry,
    pub memories: Vec<MemoryState>,
    pub history: Vec<TrialRecord>,
    pub rng: ChaCha8Rng,
    pub agent_calls: u64,
    pub policy_cursor: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string(self).map_err(|source| CheckpointError::Corrupt {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| CheckpointError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|source| CheckpointError::Corrupt {
                path: path.display().to_string(),
                source,
            })?;
        let found = value["version"].as_u64().unwrap_or(0);
        if found != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|source| CheckpointError::Corrupt {
            path: path.display().to_string(),
            source,
        })
    }
}
