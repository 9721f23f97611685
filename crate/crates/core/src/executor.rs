//! Action execution: simulated training, TIES merging, and a shell-command
//! bridge for real toolchains.
//!
//! The simulated SFT update is order dependent on purpose: covered skills
//! move toward the dataset's targets while uncovered skills decay, so
//! curricula and destructive actions both show up in the scores.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::ActionCandidate;
use crate::registry::{ModelArtifact, ObjectEntry, Payload, Registry, RegistryError};
use crate::sim::{SimConstants, SimDataset, SimDocument, SimError, SimModel};
use crate::ties::{ties_merge, MergeError, MergeSpec};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLr(f64),
    #[error("model has {model} skills but dataset describes {dataset}")]
    DimensionMismatch { model: usize, dataset: usize },
    #[error("no executor bound for action type {0:?}")]
    UnboundAction(String),
    #[error("action {action:?} payloads do not fit the executor: {reason}")]
    PayloadMismatch { action: String, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("unresolved placeholder {{{0}}} in shell template")]
    UnresolvedPlaceholder(String),
    #[error("shell command exited with status {status}: {stderr}")]
    ShellFailed { status: i32, stderr: String },
    #[error("shell command timed out after {0:?}")]
    ShellTimeout(Duration),
    #[error("shell command succeeded but output path {0} does not exist")]
    MissingOutput(PathBuf),
    #[error("cannot spawn shell command: {0}")]
    Spawn(std::io::Error),
    #[error("cannot write artifact file {path}: {source}")]
    ArtifactIo {
        path: String,
        source: std::io::Error,
    },
}

/// One simulated SFT step. Learning strength is
/// `eta = min(1, (lr / lr_ref) * (1 - exp(-n / n0)))`; covered skills move
/// `eta` of the way to the dataset targets, uncovered skills shrink by
/// `phi * eta`. Returns a new model, input untouched.
pub fn sim_sft(
    model: &SimModel,
    data: &SimDataset,
    lr: f64,
    constants: &SimConstants,
) -> Result<SimModel, ExecError> {
    if lr <= 0.0 {
        return Err(ExecError::NonPositiveLr(lr));
    }
    if model.dim() != data.dim() {
        return Err(ExecError::DimensionMismatch {
            model: model.dim(),
            dataset: data.dim(),
        });
    }
    let eta = ((lr / constants.lr_ref) * (1.0 - (-(data.examples as f64) / constants.n0).exp()))
        .min(1.0);
    let skills = model
        .skills
        .iter()
        .zip(data.targets.iter().zip(&data.coverage))
        .map(|(&s, (&target, &covered))| {
            if covered != 0 {
                s + eta * (target - s)
            } else {
                s * (1.0 - constants.phi * eta)
            }
        })
        .collect();
    Ok(SimModel::new(skills))
}

/// Which simulated operation an action type maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimOp {
    Sft,
    TiesMerge,
}

/// Shell executor settings: a command template with named placeholders and
/// an optional timeout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub template: String,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

/// Executor behind one action type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutorBinding {
    Simulated { op: SimOp },
    Shell(ShellSpec),
}

/// Captured output of a shell execution, for the run trace.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ShellLog {
    pub command: String,
    pub stdout: String,
    pub stderr: String,
    pub status: i32,
}

/// Payload produced by an execution plus any shell log.
#[derive(Debug)]
pub struct Produced {
    pub payload: Payload,
    pub shell_log: Option<ShellLog>,
}

/// Action-type to executor map plus the paths executors resolve against.
#[derive(Debug, Clone)]
pub struct ExecutorSet {
    bindings: IndexMap<String, ExecutorBinding>,
    /// Base directory for relative path payloads (usually the config dir).
    root: PathBuf,
    /// Where generated artifacts and serialized shell inputs land.
    out_dir: PathBuf,
}

impl ExecutorSet {
    pub fn new(
        bindings: IndexMap<String, ExecutorBinding>,
        root: PathBuf,
        out_dir: PathBuf,
    ) -> Self {
        Self {
            bindings,
            root,
            out_dir,
        }
    }

    /// All-simulated set with the default sft / ties_merging mapping.
    pub fn simulated() -> Self {
        let mut bindings = IndexMap::new();
        bindings.insert("sft".to_string(), ExecutorBinding::Simulated { op: SimOp::Sft });
        bindings.insert(
            "ties_merging".to_string(),
            ExecutorBinding::Simulated { op: SimOp::TiesMerge },
        );
        Self::new(bindings, PathBuf::new(), std::env::temp_dir())
    }

    pub fn binding(&self, action: &str) -> Option<&ExecutorBinding> {
        self.bindings.get(action)
    }

    /// Run `action` and return the produced payload without touching the
    /// registry, so callers can evaluate before committing.
    pub fn produce(
        &self,
        step: u32,
        action: &ActionCandidate,
        registry: &Registry,
        constants: &SimConstants,
    ) -> Result<Produced, ExecError> {
        let binding = self
            .binding(&action.schema)
            .ok_or_else(|| ExecError::UnboundAction(action.schema.clone()))?;
        let entries: Vec<&ObjectEntry> = action
            .bindings
            .iter()
            .map(|id| registry.entry(*id))
            .collect::<Result<_, _>>()?;
        match binding {
            ExecutorBinding::Simulated { op: SimOp::Sft } => {
                let (model, data, lr) = self.sft_inputs(&action.schema, &entries)?;
                Ok(Produced {
                    payload: Payload::Model(sim_sft(&model, &data, lr, constants)?),
                    shell_log: None,
                })
            }
            ExecutorBinding::Simulated { op: SimOp::TiesMerge } => {
                let (base, models, spec) = self.merge_inputs(&action.schema, &entries)?;
                let refs: Vec<&SimModel> = models.iter().collect();
                Ok(Produced {
                    payload: Payload::Model(ties_merge(&base, &refs, &spec)?),
                    shell_log: None,
                })
            }
            ExecutorBinding::Shell(spec) => self.run_shell(step, spec, &entries),
        }
    }

    /// [`Self::produce`] plus registration of the generated model (index 0)
    /// and its lineage edge.
    pub fn execute(
        &self,
        step: u32,
        action: &ActionCandidate,
        registry: &mut Registry,
        constants: &SimConstants,
    ) -> Result<ModelArtifact, ExecError> {
        let produced = self.produce(step, action, registry, constants)?;
        Ok(registry.register_generated_model(
            step,
            0,
            &action.schema,
            &action.bindings,
            produced.payload,
        )?)
    }

    fn resolve_doc(&self, path: &str) -> Result<SimDocument, SimError> {
        let joined = if Path::new(path).is_absolute() {
            PathBuf::from(path)
        } else {
            self.root.join(path)
        };
        SimDocument::load(&joined)
    }

    fn mismatch(&self, action: &str, reason: impl Into<String>) -> ExecError {
        ExecError::PayloadMismatch {
            action: action.to_string(),
            reason: reason.into(),
        }
    }

    /// Classify resolved payloads for an SFT-shaped action: exactly one
    /// model, one dataset, one scalar learning rate, in any slot order.
    fn sft_inputs(
        &self,
        action: &str,
        entries: &[&ObjectEntry],
    ) -> Result<(SimModel, SimDataset, f64), ExecError> {
        let mut models = Vec::new();
        let mut datasets = Vec::new();
        let mut scalars = Vec::new();
        for e in entries {
            match &e.payload {
                Payload::Model(m) => models.push(m.clone()),
                Payload::Dataset(d) => datasets.push(d.clone()),
                Payload::Scalar(x) => scalars.push(*x),
                Payload::Path(p) => match self.resolve_doc(p)? {
                    SimDocument::Model(m) => models.push(m),
                    SimDocument::Dataset(d) => datasets.push(d),
                },
                Payload::Tuple(_) => {
                    return Err(self.mismatch(action, format!("unexpected tuple object {}", e.label)))
                }
            }
        }
        if models.len() != 1 || datasets.len() != 1 || scalars.len() != 1 {
            return Err(self.mismatch(
                action,
                format!(
                    "need 1 model / 1 dataset / 1 learning rate, got {}/{}/{}",
                    models.len(),
                    datasets.len(),
                    scalars.len()
                ),
            ));
        }
        datasets[0].validate()?;
        Ok((models.remove(0), datasets.remove(0), scalars[0]))
    }

    /// Classify payloads for a merge-shaped action: the first model is the
    /// base, the rest are merge inputs; one tuple = weights, one scalar =
    /// density.
    fn merge_inputs(
        &self,
        action: &str,
        entries: &[&ObjectEntry],
    ) -> Result<(SimModel, Vec<SimModel>, MergeSpec), ExecError> {
        let mut models = Vec::new();
        let mut tuples = Vec::new();
        let mut scalars = Vec::new();
        for e in entries {
            match &e.payload {
                Payload::Model(m) => models.push(m.clone()),
                Payload::Tuple(t) => tuples.push(t.clone()),
                Payload::Scalar(x) => scalars.push(*x),
                Payload::Path(p) => match self.resolve_doc(p)? {
                    SimDocument::Model(m) => models.push(m),
                    SimDocument::Dataset(_) => {
                        return Err(self.mismatch(action, format!("{} is a dataset", e.label)))
                    }
                },
                Payload::Dataset(_) => {
                    return Err(self.mismatch(action, format!("unexpected dataset {}", e.label)))
                }
            }
        }
        if models.len() < 3 || tuples.len() != 1 || scalars.len() != 1 {
            return Err(self.mismatch(
                action,
                format!(
                    "need base + >=2 models / 1 weight tuple / 1 density, got {} models, {} tuples, {} scalars",
                    models.len(),
                    tuples.len(),
                    scalars.len()
                ),
            ));
        }
        let base = models.remove(0);
        Ok((base, models, MergeSpec::new(tuples.remove(0), scalars[0])))
    }

    fn run_shell(
        &self,
        step: u32,
        spec: &ShellSpec,
        entries: &[&ObjectEntry],
    ) -> Result<Produced, ExecError> {
        let out_path = self.out_dir.join(format!("0--{step}--0"));
        let mut command = spec.template.clone();
        let mut counts: IndexMap<String, usize> = IndexMap::new();
        for e in entries {
            let base_name = placeholder_for_kind(&e.kind);
            let n = counts.entry(base_name.clone()).or_insert(0);
            *n += 1;
            let name = if *n == 1 {
                base_name
            } else {
                format!("{base_name}{n}")
            };
            let value = self.argument_value(e)?;
            command = command.replace(&format!("{{{name}}}"), &value);
        }
        command = command.replace("{out}", &out_path.display().to_string());
        if let Some(open) = command.find('{') {
            let tail = &command[open + 1..];
            let name: String = tail.chars().take_while(|c| *c != '}').collect();
            return Err(ExecError::UnresolvedPlaceholder(name));
        }

        std::fs::create_dir_all(&self.out_dir).map_err(|source| ExecError::ArtifactIo {
            path: self.out_dir.display().to_string(),
            source,
        })?;
        let timeout = Duration::from_secs(spec.timeout_secs.unwrap_or(3600));
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(ExecError::Spawn)?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait().map_err(ExecError::Spawn)? {
                Some(status) => break status,
                None if start.elapsed() > timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ExecError::ShellTimeout(timeout));
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        let output = child.wait_with_output().map_err(ExecError::Spawn)?;
        let log = ShellLog {
            command,
            stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            status: status.code().unwrap_or(-1),
        };
        if !status.success() {
            return Err(ExecError::ShellFailed {
                status: log.status,
                stderr: log.stderr,
            });
        }
        if !out_path.exists() {
            return Err(ExecError::MissingOutput(out_path));
        }
        Ok(Produced {
            payload: Payload::Path(out_path.display().to_string()),
            shell_log: Some(log),
        })
    }

    /// Render one object as a shell argument. In-memory simulated payloads
    /// are written out as documents so external tools can read them.
    fn argument_value(&self, entry: &ObjectEntry) -> Result<String, ExecError> {
        match &entry.payload {
            Payload::Path(p) => {
                if Path::new(p).is_absolute() || self.root.as_os_str().is_empty() {
                    Ok(p.clone())
                } else {
                    Ok(self.root.join(p).display().to_string())
                }
            }
            Payload::Scalar(x) => Ok(format!("{x}")),
            Payload::Tuple(t) => Ok(t
                .iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")),
            Payload::Model(m) => self.write_doc(&entry.label, &SimDocument::Model(m.clone())),
            Payload::Dataset(d) => self.write_doc(&entry.label, &SimDocument::Dataset(d.clone())),
        }
    }

    fn write_doc(&self, label: &str, doc: &SimDocument) -> Result<String, ExecError> {
        let dir = self.out_dir.join("inputs");
        std::fs::create_dir_all(&dir).map_err(|source| ExecError::ArtifactIo {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join(format!("{label}.json"));
        doc.save(&path)?;
        Ok(path.display().to_string())
    }
}

/// Placeholder name a slot kind maps to in shell templates.
fn placeholder_for_kind(kind: &str) -> String {
    if kind.contains("base") {
        "base".to_string()
    } else if kind.contains("model") {
        "model".to_string()
    } else if kind.contains("data") {
        "dataset".to_string()
    } else if kind.contains("lr") {
        "lr".to_string()
    } else if kind.contains("weight") {
        "weights".to_string()
    } else if kind.contains("density") {
        "density".to_string()
    } else {
        kind.to_string()
    }
}
