//! Task scoring and multi-task aggregation.
//!
//! Per-task metrics live behind the [`Evaluator`] trait; the shipped
//! evaluators are the simulated one (reads skill vectors) and a fixed-table
//! stub. Aggregation scales each task by a weight derived from its metric's
//! maximum so every task can contribute at most the same amount.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{map_items, Parallelism};
use crate::registry::Payload;
use crate::sim::{SimDocument, SimModel};

/// One evaluation task: name, metric identifier, the metric's maximum
/// attainable value, and the scaling weight applied during aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub metric: String,
    pub max_value: f64,
    pub weight: f64,
}

impl TaskSpec {
    /// Build a task from a `(name, metric)` config pair, deriving the weight
    /// so the task's maximum contribution is 1.
    pub fn from_pair(name: &str, metric: &str) -> Result<TaskSpec, EvalError> {
        let max_value = metric_max(metric).ok_or_else(|| EvalError::UnknownMetric {
            task: name.to_string(),
            metric: metric.to_string(),
        })?;
        Ok(TaskSpec {
            name: name.to_string(),
            metric: metric.to_string(),
            max_value,
            weight: 1.0 / max_value,
        })
    }
}

/// Maximum attainable value per metric identifier.
pub fn metric_max(metric: &str) -> Option<f64> {
    match metric {
        "acc" => Some(1.0),
        "score10" => Some(10.0),
        _ => None,
    }
}

/// Per-task scores in task order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<(String, f64)>);

impl ScoreVector {
    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|(_, v)| *v).collect()
    }
}

/// How per-task scores combine into the scalar feedback signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    WeightedSum,
    /// Weighted sum divided by the weight total, keeping the result on a
    /// 0-1 scale — the form the memory prompt presents to the agent.
    #[default]
    Mean,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task {task:?} uses unknown metric {metric:?}")]
    UnknownMetric { task: String, metric: String },
    #[error("max_value must be positive, got {0}")]
    NonPositiveMax(f64),
    #[error("{scores} scores do not align with {weights} weights")]
    LengthMismatch { scores: usize, weights: usize },
    #[error("evaluator cannot score payload for task {task:?}: {reason}")]
    BadPayload { task: String, reason: String },
    #[error("no stub score for model {model:?} on task {task:?}")]
    MissingTableEntry { model: String, task: String },
    #[error("task {task:?} produced {value} outside [0, {max}]")]
    OutOfRange { task: String, value: f64, max: f64 },
}

/// Weights making each task's maximum contribution uniform: 1 / max_value.
pub fn derive_weights(tasks: &[(String, f64)]) -> Result<Vec<f64>, EvalError> {
    tasks
        .iter()
        .map(|(_, max)| {
            if *max <= 0.0 {
                Err(EvalError::NonPositiveMax(*max))
            } else {
                Ok(1.0 / max)
            }
        })
        .collect()
}

/// Combine per-task scores into one number under `rule`.
pub fn aggregate(scores: &[f64], weights: &[f64], rule: AggregationRule) -> Result<f64, EvalError> {
    if scores.len() != weights.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    let weighted: f64 = scores.iter().zip(weights).map(|(s, w)| s * w).sum();
    match rule {
        AggregationRule::WeightedSum => Ok(weighted),
        AggregationRule::Mean => {
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(EvalError::NonPositiveMax(total));
            }
            Ok(weighted / total)
        }
    }
}

/// Scores one model on one task. `index` is the task's position in the task
/// list; the simulated evaluator maps it to the matching skill dimension.
pub trait Evaluator: Send + Sync {
    fn score(
        &self,
        model_label: &str,
        payload: &Payload,
        task: &TaskSpec,
        index: usize,
    ) -> Result<f64, EvalError>;
}

/// Reads skill `k` for task `k`, clamps it to [0, 1] and scales by the
/// metric maximum. Path payloads are resolved as simulated model documents.
#[derive(Debug, Clone, Default)]
pub struct SimEvaluator {
    /// Base directory for resolving relative path payloads.
    pub root: Option<PathBuf>,
}

impl SimEvaluator {
    fn resolve(&self, payload: &Payload, task: &str) -> Result<SimModel, EvalError> {
        match payload {
            Payload::Model(m) => Ok(m.clone()),
            Payload::Path(p) => {
                let path = match &self.root {
                    Some(root) => root.join(p),
                    None => PathBuf::from(p),
                };
                match SimDocument::load(&path) {
                    Ok(SimDocument::Model(m)) => Ok(m),
                    Ok(_) => Err(EvalError::BadPayload {
                        task: task.to_string(),
                        reason: format!("{} is a dataset document, not a model", path.display()),
                    }),
                    Err(e) => Err(EvalError::BadPayload {
                        task: task.to_string(),
                        reason: e.to_string(),
                    }),
                }
            }
            other => Err(EvalError::BadPayload {
                task: task.to_string(),
                reason: format!("payload {other:?} is not a model"),
            }),
        }
    }
}

impl Evaluator for SimEvaluator {
    fn score(
        &self,
        _model_label: &str,
        payload: &Payload,
        task: &TaskSpec,
        index: usize,
    ) -> Result<f64, EvalError> {
        let model = self.resolve(payload, &task.name)?;
        let skill = model.skills.get(index).copied().ok_or_else(|| {
            EvalError::BadPayload {
                task: task.name.clone(),
                reason: format!(
                    "model has {} skills but task index is {index}",
                    model.skills.len()
                ),
            }
        })?;
        Ok(skill.clamp(0.0, 1.0) * task.max_value)
    }
}

/// Fixed `(model label, task) -> value` table, standing in for external
/// evaluator processes in tests.
#[derive(Debug, Clone, Default)]
pub struct TableEvaluator {
    values: HashMap<(String, String), f64>,
}

impl TableEvaluator {
    pub fn insert(&mut self, model: &str, task: &str, value: f64) {
        self.values
            .insert((model.to_string(), task.to_string()), value);
    }
}

impl Evaluator for TableEvaluator {
    fn score(
        &self,
        model_label: &str,
        _payload: &Payload,
        task: &TaskSpec,
        _index: usize,
    ) -> Result<f64, EvalError> {
        self.values
            .get(&(model_label.to_string(), task.name.clone()))
            .copied()
            .ok_or_else(|| EvalError::MissingTableEntry {
                model: model_label.to_string(),
                task: task.name.clone(),
            })
    }
}

/// Score `payload` on every task, assembling results in task order. Task
/// evaluations of one model are independent and may run in parallel.
pub fn evaluate(
    model_label: &str,
    payload: &Payload,
    tasks: &[TaskSpec],
    evaluator: &dyn Evaluator,
    mode: Parallelism,
) -> Result<ScoreVector, EvalError> {
    let indexed: Vec<(usize, &TaskSpec)> = tasks.iter().enumerate().collect();
    let results = map_items(&indexed, mode, |(index, task)| {
        let value = evaluator.score(model_label, payload, task, *index)?;
        if !(0.0..=task.max_value).contains(&value) {
            return Err(EvalError::OutOfRange {
                task: task.name.clone(),
                value,
                max: task.max_value,
            });
        }
        Ok((task.name.clone(), value))
    });
    Ok(ScoreVector(results.into_iter().collect::<Result<_, _>>()?))
}
