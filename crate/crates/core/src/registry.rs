//! Object pool and artifact lineage.
//!
//! The registry owns every object a run can bind into an action — initial
//! models, datasets and hyperparameter values declared in the config, plus
//! every model generated during the run — and records the producing action
//! of each generated artifact so pipelines can be reconstructed later.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimDataset, SimModel};

/// Handle to an entry in the registry, unique within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obj#{}", self.0)
    }
}

/// Opaque value behind an object. The registry never interprets payloads;
/// executors and evaluators resolve the variant they need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Model(SimModel),
    Dataset(SimDataset),
    Scalar(f64),
    Tuple(Vec<f64>),
    Path(String),
}

impl Payload {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Payload::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[f64]> {
        match self {
            Payload::Tuple(xs) => Some(xs),
            _ => None,
        }
    }
}

/// Where an object came from: declared in the config, or produced by the
/// action executed at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Action { step: u32 },
}

/// One object in the pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: ObjectId,
    pub kind: String,
    pub label: String,
    pub payload: Payload,
    pub provenance: Provenance,
}

/// A model entry plus its generation coordinates (step `n`, within-step
/// index `k`; both zero for initial models).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub object: ObjectId,
    pub label: String,
    pub step: u32,
    pub index: u32,
}

/// One executed action: which inputs went in, what came out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageRecord {
    pub step: u32,
    pub action: String,
    pub inputs: Vec<ObjectId>,
    pub output: ObjectId,
}

/// One node of a reconstructed pipeline, in execution order. Inputs are
/// labels, so merge branches are recoverable by following label references
/// between steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub step: u32,
    pub action: String,
    pub inputs: Vec<String>,
    pub output: String,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate label {label:?} within kind {kind:?}")]
    DuplicateLabel { kind: String, label: String },
    #[error("unknown object id {0}")]
    UnknownId(ObjectId),
    #[error("no object labeled {label:?} of kind {kind:?}")]
    UnknownLabel { kind: String, label: String },
    #[error("generated model step must be >= 1 (0 is reserved for initial objects)")]
    ZeroStep,
    #[error("object {0} is not a registered model artifact")]
    NotAnArtifact(ObjectId),
}

/// Label for the model generated at `step` with within-step `index`,
/// in the fixed `0--n--k` format the selection prompts rely on.
pub fn generated_model_label(step: u32, index: u32) -> Result<String, RegistryError> {
    if step == 0 {
        return Err(RegistryError::ZeroStep);
    }
    Ok(format!("0--{step}--{index}"))
}

/// Inverse of [`generated_model_label`]; `None` when `text` is not a
/// generated-model label.
pub fn parse_generated_label(text: &str) -> Option<(u32, u32)> {
    let mut parts = text.split("--");
    let (zero, n, k) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || zero != "0" {
        return None;
    }
    if n.is_empty() || k.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !k.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let step: u32 = n.parse().ok()?;
    if step == 0 {
        return None;
    }
    Some((step, k.parse().ok()?))
}

/// Immutable snapshot of the pool used by enumeration and prompt rendering:
/// per kind, the objects in registration order.
#[derive(Debug, Clone, Default)]
pub struct PoolView {
    kinds: Vec<(String, Vec<(ObjectId, String)>)>,
}

impl PoolView {
    /// Objects of `kind` as `(id, label)` pairs in registration order.
    pub fn objects(&self, kind: &str) -> &[(ObjectId, String)] {
        self.kinds
            .iter()
            .find(|(k, _)| k == kind)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn size(&self, kind: &str) -> usize {
        self.objects(kind).len()
    }
}

/// The object pool plus the lineage graph of executed actions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    entries: Vec<ObjectEntry>,
    lineage: Vec<LineageRecord>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an object under `(kind, label)`. Labels must be unique
    /// within a kind; ids are assigned in registration order.
    pub fn register_object(
        &mut self,
        kind: &str,
        label: &str,
        payload: Payload,
        provenance: Provenance,
    ) -> Result<ObjectId, RegistryError> {
        if self.lookup(kind, label).is_some() {
            return Err(RegistryError::DuplicateLabel {
                kind: kind.to_string(),
                label: label.to_string(),
            });
        }
        let id = ObjectId(self.entries.len() as u32);
        self.entries.push(ObjectEntry {
            id,
            kind: kind.to_string(),
            label: label.to_string(),
            payload,
            provenance,
        });
        Ok(id)
    }

    /// Register the model produced by the action at `step` and record its
    /// lineage edge in one operation.
    pub fn register_generated_model(
        &mut self,
        step: u32,
        index: u32,
        action: &str,
        inputs: &[ObjectId],
        payload: Payload,
    ) -> Result<ModelArtifact, RegistryError> {
        for input in inputs {
            self.entry(*input)?;
        }
        let label = generated_model_label(step, index)?;
        let id = self.register_object("models", &label, payload, Provenance::Action { step })?;
        self.lineage.push(LineageRecord {
            step,
            action: action.to_string(),
            inputs: inputs.to_vec(),
            output: id,
        });
        Ok(ModelArtifact {
            object: id,
            label,
            step,
            index,
        })
    }

    pub fn entry(&self, id: ObjectId) -> Result<&ObjectEntry, RegistryError> {
        self.entries
            .get(id.0 as usize)
            .ok_or(RegistryError::UnknownId(id))
    }

    pub fn lookup(&self, kind: &str, label: &str) -> Option<&ObjectEntry> {
        self.entries
            .iter()
            .find(|e| e.kind == kind && e.label == label)
    }

    /// Find an object by label across all kinds (labels may repeat across
    /// kinds; the first registration wins, which is unambiguous for the
    /// label vocabularies pipeline scripts use).
    pub fn lookup_label(&self, label: &str) -> Option<&ObjectEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn entries(&self) -> &[ObjectEntry] {
        &self.entries
    }

    /// Mutable payload access for pool transformations (dataset scaling in
    /// replay drivers). Kinds, labels and ids must not change.
    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ObjectEntry> {
        self.entries.iter_mut()
    }

    pub fn lineage(&self) -> &[LineageRecord] {
        &self.lineage
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Snapshot of per-kind object lists in registration order.
    pub fn pool_view(&self) -> PoolView {
        let mut kinds: Vec<(String, Vec<(ObjectId, String)>)> = Vec::new();
        for e in &self.entries {
            match kinds.iter_mut().find(|(k, _)| *k == e.kind) {
                Some((_, v)) => v.push((e.id, e.label.clone())),
                None => kinds.push((e.kind.clone(), vec![(e.id, e.label.clone())])),
            }
        }
        PoolView { kinds }
    }

    fn producing_record(&self, id: ObjectId) -> Option<&LineageRecord> {
        self.lineage.iter().find(|r| r.output == id)
    }

    /// Reconstruct the action sequence that produced `id`, root-first in
    /// execution order. Initial objects yield an empty pipeline; merge
    /// ancestries appear as a tree flattened by step, with branch structure
    /// recoverable from the input labels of each step.
    pub fn lineage_pipeline(&self, id: ObjectId) -> Result<Vec<PipelineStep>, RegistryError> {
        let entry = self.entry(id)?;
        if entry.provenance == Provenance::Initial {
            return Ok(Vec::new());
        }
        let mut wanted: Vec<&LineageRecord> = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            let Some(record) = self.producing_record(cur) else {
                continue;
            };
            if wanted.iter().any(|r| r.step == record.step) {
                continue;
            }
            wanted.push(record);
            for input in &record.inputs {
                if self.entry(*input)?.provenance != Provenance::Initial {
                    stack.push(*input);
                }
            }
        }
        wanted.sort_by_key(|r| r.step);
        wanted
            .into_iter()
            .map(|r| {
                let inputs = r
                    .inputs
                    .iter()
                    .map(|i| self.entry(*i).map(|e| e.label.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(PipelineStep {
                    step: r.step,
                    action: r.action.clone(),
                    inputs,
                    output: self.entry(r.output)?.label.clone(),
                })
            })
            .collect()
    }

    /// Generated model artifacts in creation order.
    pub fn artifacts(&self) -> Vec<ModelArtifact> {
        self.entries
            .iter()
            .filter_map(|e| match (e.kind.as_str(), parse_generated_label(&e.label)) {
                ("models", Some((step, index))) if e.provenance != Provenance::Initial => {
                    Some(ModelArtifact {
                        object: e.id,
                        label: e.label.clone(),
                        step,
                        index,
                    })
                }
                _ => None,
            })
            .collect()
    }
}
