//! Simulated model space: models are skill vectors, datasets carry per-skill
//! attainable targets plus a coverage mask and an example count. These stand
//! in for real checkpoints and SFT corpora at desk scale.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A model in the simulated space: one proficiency value per skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub skills: Vec<f64>,
}

impl SimModel {
    pub fn new(skills: Vec<f64>) -> Self {
        Self { skills }
    }

    pub fn dim(&self) -> usize {
        self.skills.len()
    }
}

/// A dataset in the simulated space. `targets[k]` is the proficiency the
/// data can teach for skill `k`, `coverage[k]` whether it teaches that skill
/// at all, and `examples` the corpus size (drives learning strength).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub targets: Vec<f64>,
    pub coverage: Vec<u8>,
    pub examples: u64,
}

impl SimDataset {
    pub fn new(targets: Vec<f64>, coverage: Vec<u8>, examples: u64) -> Self {
        Self {
            targets,
            coverage,
            examples,
        }
    }

    pub fn dim(&self) -> usize {
        self.targets.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.targets.len() != self.coverage.len() {
            return Err(SimError::DimensionMismatch {
                expected: self.targets.len(),
                got: self.coverage.len(),
            });
        }
        if self.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(SimError::TargetOutOfRange);
        }
        if !self.coverage.iter().any(|&c| c != 0) {
            return Err(SimError::EmptyCoverage);
        }
        if self.examples == 0 {
            return Err(SimError::NoExamples);
        }
        Ok(())
    }

    /// Pool several datasets into one "all data" object: full coverage,
    /// per-skill targets equal to the componentwise max of the constituents,
    /// example count equal to the total.
    pub fn mixture(parts: &[&SimDataset]) -> Result<SimDataset, SimError> {
        let first = parts.first().ok_or(SimError::EmptyMixture)?;
        let dim = first.dim();
        let mut targets = vec![0.0; dim];
        let mut examples = 0u64;
        for part in parts {
            if part.dim() != dim {
                return Err(SimError::DimensionMismatch {
                    expected: dim,
                    got: part.dim(),
                });
            }
            for (t, &p) in targets.iter_mut().zip(&part.targets) {
                if p > *t {
                    *t = p;
                }
            }
            examples += part.examples;
        }
        Ok(SimDataset::new(targets, vec![1; dim], examples))
    }
}

/// Constants of the simulated training dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConstants {
    /// Forgetting factor applied to uncovered skills.
    pub phi: f64,
    /// Example count at which learning strength reaches 1 - 1/e.
    pub n0: f64,
    /// Reference learning rate; lr scales strength linearly against it.
    pub lr_ref: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        Self {
            phi: 0.3,
            n0: 1000.0,
            lr_ref: 1e-6,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset targets must lie in [0, 1]")]
    TargetOutOfRange,
    #[error("dataset coverage mask is all zeros")]
    EmptyCoverage,
    #[error("dataset has zero examples")]
    NoExamples,
    #[error("cannot build a mixture from zero datasets")]
    EmptyMixture,
    #[error("cannot read simulated document {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse simulated document {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("document {0} is neither a model (skills) nor a dataset (targets/coverage/examples)")]
    UnknownDocument(String),
}

/// On-disk form of a simulated object: a model (`skills`) or a dataset
/// (`targets`/`coverage`/`examples`), as a plain JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimDocument {
    Model(SimModel),
    Dataset(SimDataset),
}

impl SimDocument {
    pub fn load(path: &Path) -> Result<SimDocument, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| SimError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self).expect("sim documents serialize");
        std::fs::write(path, text).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
