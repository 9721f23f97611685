//! Run configuration: a JSON document whose core keys mirror the standard
//! layout (`seed`, `total_timesteps`, `controller`, `controller_model`,
//! `objects`, `action_types`, `eval_tasks`, `score_aggregation`), extended
//! with namespaced keys for executors, simulator constants, endpoint
//! settings and policy options.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionSchema, PairMode};
use crate::agent::EndpointConfig;
use crate::evaluation::{AggregationRule, TaskSpec};
use crate::executor::{ExecutorBinding, ExecutorSet, ShellSpec, SimOp};
use crate::parallel::Parallelism;
use crate::registry::{Payload, Provenance, Registry, RegistryError};
use crate::sim::{SimConstants, SimDataset, SimDocument, SimModel};

/// Controller value selecting the LLM policy over a live endpoint, as used
/// in run configs.
pub const CONTROLLER_LLM: &str = "LaMDAgent_gpt";
/// LLM policy driven by a scripted agent loaded from `policy_options.agent_script`.
pub const CONTROLLER_SCRIPTED: &str = "scripted";
/// Uniform random policy; no agent calls, no memory updates.
pub const CONTROLLER_RANDOM: &str = "random";
/// Scripted policy replaying `policy_options.pipeline_script`.
pub const CONTROLLER_PIPELINE: &str = "pipeline";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unknown controller {0:?} (expected LaMDAgent_gpt, scripted, random or pipeline)")]
    UnknownController(String),
    #[error("controller {controller:?} requires {requirement}")]
    MissingControllerInput {
        controller: String,
        requirement: String,
    },
    #[error("action type {action:?} has no slots")]
    EmptySlots { action: String },
    #[error("slot kind {kind:?} of action {action:?} is not declared under objects")]
    UndeclaredKind { action: String, kind: String },
    #[error("object kind {0:?} is empty (only \"models\" may start empty)")]
    EmptyKind(String),
    #[error("no action types declared")]
    NoActionTypes,
    #[error("no eval tasks declared")]
    NoEvalTasks,
    #[error("action type {action:?} is not bound to an executor")]
    UnboundExecutor { action: String },
    #[error("simulated executor for {action:?} needs an explicit op (only sft and ties_merging have defaults)")]
    UnknownSimOp { action: String },
    #[error("simulated payloads disagree on dimension: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{tasks} eval tasks exceed the {dims} simulated skill dimensions")]
    TooManyTasks { tasks: usize, dims: usize },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

/// One object reference in the config's `objects` lists: a path string, a
/// bare scalar, a weight tuple, or an inline simulated document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObjectRef {
    PathRef(String),
    Scalar(f64),
    Tuple(Vec<f64>),
    InlineModel { label: String, skills: Vec<f64> },
    InlineDataset {
        label: String,
        targets: Vec<f64>,
        coverage: Vec<u8>,
        examples: u64,
    },
}

/// Executor binding as configured; `simulated` resolves its op from the
/// action name when not given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutorConfig {
    Simulated {
        #[serde(default)]
        op: Option<SimOp>,
    },
    Shell {
        template: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

/// How repeated same-kind merge slots enumerate. `auto` picks unordered
/// when every configured weight tuple is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePairsOption {
    #[default]
    Auto,
    Unordered,
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyOptions {
    pub merge_pairs: MergePairsOption,
    pub parse_retries: u32,
    pub memory_window: Option<usize>,
    pub memory_task_scores: bool,
    pub parallelism: Parallelism,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Scripted-agent response file, for `controller = "scripted"`.
    pub agent_script: Option<String>,
    /// Pipeline script, for `controller = "pipeline"`.
    pub pipeline_script: Option<String>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            merge_pairs: MergePairsOption::Auto,
            parse_retries: crate::policy::DEFAULT_PARSE_RETRIES,
            memory_window: None,
            memory_task_scores: false,
            parallelism: Parallelism::default(),
            temperature: 0.0,
            max_tokens: 1024,
            agent_script: None,
            pipeline_script: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub total_timesteps: u32,
    pub controller: String,
    #[serde(default)]
    pub controller_model: Option<String>,
    pub objects: IndexMap<String, Vec<ObjectRef>>,
    pub action_types: IndexMap<String, Vec<String>>,
    pub eval_tasks: Vec<(String, String)>,
    #[serde(default)]
    pub test_tasks: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub score_aggregation: AggregationRule,
    #[serde(default)]
    pub executors: IndexMap<String, ExecutorConfig>,
    #[serde(default)]
    pub simulator: SimConstants,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub policy_options: PolicyOptions,
    /// Directory relative paths resolve against; set on load, not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    /// Action schemas in declaration order.
    pub fn schemas(&self) -> Vec<ActionSchema> {
        self.action_types
            .iter()
            .map(|(name, slots)| ActionSchema {
                name: name.clone(),
                slots: slots.clone(),
            })
            .collect()
    }

    /// Resolve the configured merge-pair option: `auto` means unordered
    /// exactly when every tuple object in the pool is symmetric.
    pub fn pair_mode(&self) -> PairMode {
        match self.policy_options.merge_pairs {
            MergePairsOption::Unordered => PairMode::Unordered,
            MergePairsOption::Ordered => PairMode::Ordered,
            MergePairsOption::Auto => {
                let symmetric = self.objects.values().flatten().all(|r| match r {
                    ObjectRef::Tuple(t) => {
                        t.iter().zip(t.iter().rev()).all(|(a, b)| a == b)
                    }
                    _ => true,
                });
                if symmetric {
                    PairMode::Unordered
                } else {
                    PairMode::Ordered
                }
            }
        }
    }

    pub fn validation_tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        self.eval_tasks
            .iter()
            .map(|(name, metric)| Ok(TaskSpec::from_pair(name, metric)?))
            .collect()
    }

    /// Held-out test tasks for final reporting; defaults to the validation
    /// tasks when not configured.
    pub fn report_tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        match &self.test_tasks {
            Some(tasks) => tasks
                .iter()
                .map(|(name, metric)| Ok(TaskSpec::from_pair(name, metric)?))
                .collect(),
            None => self.validation_tasks(),
        }
    }

    /// Register all initial objects and return the fresh registry.
    pub fn build_registry(&self) -> Result<Registry, ConfigError> {
        let mut registry = Registry::new();
        for (kind, refs) in &self.objects {
            for r in refs {
                let (label, payload) = self.realize(r)?;
                registry.register_object(kind, &label, payload, Provenance::Initial)?;
            }
        }
        Ok(registry)
    }

    /// Turn an object reference into its registry label and payload. Path
    /// references load as simulated documents when the file exists (with or
    /// without a `.json` suffix) and stay opaque paths otherwise.
    fn realize(&self, r: &ObjectRef) -> Result<(String, Payload), ConfigError> {
        Ok(match r {
            ObjectRef::PathRef(path) => {
                let label = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.clone());
                let payload = match self.locate(path) {
                    Some(found) => match SimDocument::load(&found)? {
                        SimDocument::Model(m) => Payload::Model(m),
                        SimDocument::Dataset(d) => Payload::Dataset(d),
                    },
                    None => Payload::Path(path.clone()),
                };
                (label, payload)
            }
            ObjectRef::Scalar(x) => (scalar_label(*x), Payload::Scalar(*x)),
            ObjectRef::Tuple(t) => (tuple_label(t), Payload::Tuple(t.clone())),
            ObjectRef::InlineModel { label, skills } => (
                label.clone(),
                Payload::Model(SimModel::new(skills.clone())),
            ),
            ObjectRef::InlineDataset {
                label,
                targets,
                coverage,
                examples,
            } => (
                label.clone(),
                Payload::Dataset(SimDataset::new(targets.clone(), coverage.clone(), *examples)),
            ),
        })
    }

    fn locate(&self, reference: &str) -> Option<PathBuf> {
        let root = self.base_dir.clone().unwrap_or_default();
        for candidate in [
            root.join(reference),
            root.join(format!("{reference}.json")),
        ] {
            if candidate.is_file() {
                return Some(candidate);
            }
        }
        None
    }

    /// Resolved action-type to executor bindings. `sft` and `ties_merging`
    /// default to the simulated executors; anything else must be configured.
    pub fn executor_set(&self, artifacts_dir: &Path) -> Result<ExecutorSet, ConfigError> {
        let mut bindings = IndexMap::new();
        for action in self.action_types.keys() {
            let binding = match self.executors.get(action) {
                Some(ExecutorConfig::Shell { template, timeout_secs }) => {
                    ExecutorBinding::Shell(ShellSpec {
                        template: template.clone(),
                        timeout_secs: *timeout_secs,
                    })
                }
                Some(ExecutorConfig::Simulated { op }) => ExecutorBinding::Simulated {
                    op: match op {
                        Some(op) => *op,
                        None => default_sim_op(action)
                            .ok_or_else(|| ConfigError::UnknownSimOp { action: action.clone() })?,
                    },
                },
                None => ExecutorBinding::Simulated {
                    op: default_sim_op(action)
                        .ok_or_else(|| ConfigError::UnboundExecutor { action: action.clone() })?,
                },
            };
            bindings.insert(action.clone(), binding);
        }
        Ok(ExecutorSet::new(
            bindings,
            self.base_dir.clone().unwrap_or_default(),
            artifacts_dir.to_path_buf(),
        ))
    }

    /// Full startup validation: controller, action types, object kinds,
    /// executors, tasks, and simulated payload consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_inner(false)
    }

    /// As [`Self::validate`], but skipping the controller's agent-input
    /// requirements — used when a backend is injected programmatically.
    pub fn validate_assuming_backend(&self) -> Result<(), ConfigError> {
        self.validate_inner(true)
    }

    fn validate_inner(&self, backend_injected: bool) -> Result<(), ConfigError> {
        match self.controller.as_str() {
            CONTROLLER_LLM => {
                if self.endpoint.is_none() && !backend_injected {
                    return Err(ConfigError::MissingControllerInput {
                        controller: self.controller.clone(),
                        requirement: "an endpoint section (or --endpoint)".into(),
                    });
                }
            }
            CONTROLLER_SCRIPTED => {
                if self.policy_options.agent_script.is_none() && !backend_injected {
                    return Err(ConfigError::MissingControllerInput {
                        controller: self.controller.clone(),
                        requirement: "policy_options.agent_script".into(),
                    });
                }
            }
            CONTROLLER_PIPELINE => {
                if self.policy_options.pipeline_script.is_none() {
                    return Err(ConfigError::MissingControllerInput {
                        controller: self.controller.clone(),
                        requirement: "policy_options.pipeline_script".into(),
                    });
                }
            }
            CONTROLLER_RANDOM => {}
            other => return Err(ConfigError::UnknownController(other.to_string())),
        }

        if self.action_types.is_empty() {
            return Err(ConfigError::NoActionTypes);
        }
        for (action, slots) in &self.action_types {
            if slots.is_empty() {
                return Err(ConfigError::EmptySlots { action: action.clone() });
            }
            for kind in slots {
                match self.objects.get(kind) {
                    None => {
                        return Err(ConfigError::UndeclaredKind {
                            action: action.clone(),
                            kind: kind.clone(),
                        })
                    }
                    Some(refs) if refs.is_empty() && kind != "models" => {
                        return Err(ConfigError::EmptyKind(kind.clone()));
                    }
                    Some(_) => {}
                }
            }
        }
        if self.eval_tasks.is_empty() {
            return Err(ConfigError::NoEvalTasks);
        }
        self.validation_tasks()?;
        self.report_tasks()?;
        self.executor_set(Path::new("."))?;

        // Loading every object also checks path references and document
        // shapes; then check simulated dimensions agree.
        let registry = self.build_registry()?;
        let mut dims: Option<usize> = None;
        for entry in registry.entries() {
            let dim = match &entry.payload {
                Payload::Model(m) => Some(m.dim()),
                Payload::Dataset(d) => {
                    d.validate()?;
                    Some(d.dim())
                }
                _ => None,
            };
            if let Some(dim) = dim {
                match dims {
                    None => dims = Some(dim),
                    Some(seen) if seen != dim => {
                        return Err(ConfigError::DimensionMismatch(seen, dim))
                    }
                    Some(_) => {}
                }
            }
        }
        if let Some(dims) = dims {
            if self.eval_tasks.len() > dims {
                return Err(ConfigError::TooManyTasks {
                    tasks: self.eval_tasks.len(),
                    dims,
                });
            }
        }
        Ok(())
    }
}

/// Display form for scalar hyperparameters: exponent notation for small
/// magnitudes (`1e-6`), plain decimal otherwise (`0.5`).
pub fn scalar_label(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn tuple_label(t: &[f64]) -> String {
    format!(
        "[{}]",
        t.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(", ")
    )
}

fn default_sim_op(action: &str) -> Option<SimOp> {
    match action {
        "sft" => Some(SimOp::Sft),
        "ties_merging" => Some(SimOp::TiesMerge),
        _ => None,
    }
}
