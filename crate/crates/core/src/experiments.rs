//! Replayable experiment drivers: the grid-search and random baselines plus
//! the data-size and model-size scaling replays. Every driver consumes only
//! config plus pipeline/trace artifacts, so re-running one twice yields
//! identical tables.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::PlannedAction;
use crate::config::{RunConfig, CONTROLLER_RANDOM};
use crate::evaluation::{aggregate, evaluate, AggregationRule, EvalError, Evaluator, SimEvaluator, TaskSpec};
use crate::executor::ExecError;
use crate::orchestrator::{run, Orchestrator, RunError, RunOptions};
use crate::parallel::{map_items, Parallelism};
use crate::policy::{resolve_planned, PolicyError, SelectionContext};
use crate::registry::{parse_generated_label, ObjectId, Payload, Registry, RegistryError};
use crate::sim::SimModel;
use crate::ties::{ties_merge, MergeError, MergeSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read pipeline script {path}: {source}")]
    ScriptIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse pipeline script {path}: {source}")]
    ScriptParse {
        path: String,
        source: serde_json::Error,
    },
    #[error("substitution target {0:?} does not exist in the pool")]
    MissingSubstitution(String),
    #[error("grid step {0} does not divide 1 evenly")]
    BadGridStep(f64),
    #[error("grid search needs at least 2 specialists, got {0}")]
    TooFewSpecialists(usize),
    #[error("empty weight grid")]
    EmptyGrid,
    #[error("replay factor {0} must be positive")]
    BadFactor(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// An ordered action list with label-addressed objects — executable against
/// any pool providing those labels, which is what makes the scaling and
/// transfer replays possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineScript {
    pub steps: Vec<PlannedAction>,
}

impl PipelineScript {
    pub fn new(steps: Vec<PlannedAction>) -> Self {
        Self { steps }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::ScriptIo {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::ScriptParse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).expect("scripts serialize");
        std::fs::write(path, text).map_err(|source| ExperimentError::ScriptIo {
            path: path.display().to_string(),
            source,
        })
    }

    /// Extract the pipeline behind a generated model, renumbering generated
    /// labels to the replay's own step indices so the script runs on a
    /// fresh pool.
    pub fn from_lineage(registry: &Registry, model_id: ObjectId) -> Result<Self, ExperimentError> {
        let pipeline = registry.lineage_pipeline(model_id)?;
        let mut renames: IndexMap<String, String> = IndexMap::new();
        let mut steps = Vec::with_capacity(pipeline.len());
        for (index, step) in pipeline.iter().enumerate() {
            let objects = step
                .inputs
                .iter()
                .map(|label| renames.get(label).cloned().unwrap_or_else(|| label.clone()))
                .collect();
            if parse_generated_label(&step.output).is_some() {
                renames.insert(step.output.clone(), format!("0--{}--0", index + 1));
            }
            steps.push(PlannedAction {
                action: step.action.clone(),
                objects,
            });
        }
        Ok(Self { steps })
    }
}

/// How a replay modifies the pool before executing.
#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Multiply every dataset's example count.
    pub data_factor: f64,
    /// Label substitutions applied to every script reference.
    pub substitutions: IndexMap<String, String>,
    pub parallelism: Parallelism,
}

impl ReplayOptions {
    pub fn identity() -> Self {
        Self {
            data_factor: 1.0,
            substitutions: IndexMap::new(),
            parallelism: Parallelism::default(),
        }
    }
}

/// Scores of one executed pipeline: per-step validation aggregates plus the
/// final model's validation and test views.
#[derive(Debug, Clone, Serialize)]
pub struct ReplayOutcome {
    pub step_aggregates: Vec<f64>,
    pub final_label: String,
    pub val_scores: Vec<(String, f64)>,
    pub val_aggregate: f64,
    pub test_scores: Vec<(String, f64)>,
    pub test_aggregate: f64,
    /// Final model's raw skill vector (simulated pools only).
    pub final_skills: Option<Vec<f64>>,
}

/// Execute `script` against a fresh pool built from `config`, applying the
/// replay options. Factor 1 with no substitutions reproduces the original
/// run's models exactly.
pub fn run_pipeline(
    config: &RunConfig,
    script: &PipelineScript,
    options: &ReplayOptions,
) -> Result<ReplayOutcome, ExperimentError> {
    if options.data_factor <= 0.0 {
        return Err(ExperimentError::BadFactor(options.data_factor));
    }
    let mut registry = config.build_registry()?;
    if (options.data_factor - 1.0).abs() > f64::EPSILON {
        scale_datasets(&mut registry, options.data_factor);
    }
    for target in options.substitutions.values() {
        if registry.lookup_label(target).is_none() {
            return Err(ExperimentError::MissingSubstitution(target.clone()));
        }
    }

    let schemas = config.schemas();
    let pair_mode = config.pair_mode();
    let executors = config.executor_set(&std::env::temp_dir().join("ptsearch-replay"))?;
    let val_tasks = config.validation_tasks()?;
    let test_tasks = config.report_tasks()?;
    let evaluator = SimEvaluator {
        root: config.base_dir.clone(),
    };

    let mut step_aggregates = Vec::with_capacity(script.steps.len());
    let mut final_label = String::new();
    for (index, planned) in script.steps.iter().enumerate() {
        let step = (index + 1) as u32;
        let substituted = PlannedAction {
            action: planned.action.clone(),
            objects: planned
                .objects
                .iter()
                .map(|label| {
                    options
                        .substitutions
                        .get(label)
                        .cloned()
                        .unwrap_or_else(|| label.clone())
                })
                .collect(),
        };
        let view = registry.pool_view();
        let ctx = SelectionContext {
            step,
            memory: "",
            schemas: &schemas,
            pool: &view,
            pair_mode,
        };
        let candidate = resolve_planned(&substituted, &ctx)?;
        let artifact = executors.execute(step, &candidate, &mut registry, &config.simulator)?;
        let entry = registry.entry(artifact.object)?;
        let scores = evaluate(
            &artifact.label,
            &entry.payload,
            &val_tasks,
            &evaluator,
            options.parallelism,
        )?;
        let weights: Vec<f64> = val_tasks.iter().map(|t| t.weight).collect();
        step_aggregates.push(aggregate(
            &scores.values(),
            &weights,
            config.score_aggregation,
        )?);
        final_label = artifact.label;
    }

    let entry = registry
        .lookup("models", &final_label)
        .ok_or_else(|| ExperimentError::MissingSubstitution(final_label.clone()))?;
    let val_weights: Vec<f64> = val_tasks.iter().map(|t| t.weight).collect();
    let val_scores = evaluate(
        &final_label,
        &entry.payload,
        &val_tasks,
        &evaluator,
        options.parallelism,
    )?;
    let val_aggregate = aggregate(&val_scores.values(), &val_weights, config.score_aggregation)?;
    let test_weights: Vec<f64> = test_tasks.iter().map(|t| t.weight).collect();
    let test_scores = evaluate(
        &final_label,
        &entry.payload,
        &test_tasks,
        &evaluator,
        options.parallelism,
    )?;
    let test_aggregate =
        aggregate(&test_scores.values(), &test_weights, config.score_aggregation)?;
    let final_skills = match &entry.payload {
        Payload::Model(m) => Some(m.skills.clone()),
        _ => None,
    };
    Ok(ReplayOutcome {
        step_aggregates,
        final_label,
        val_scores: val_scores.0,
        val_aggregate,
        test_scores: test_scores.0,
        test_aggregate,
        final_skills,
    })
}

fn scale_datasets(registry: &mut Registry, factor: f64) {
    for entry in registry.entries_mut() {
        if let Payload::Dataset(d) = &mut entry.payload {
            d.examples = ((d.examples as f64 * factor).round() as u64).max(1);
        }
    }
}

/// One row of a data-size scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleRow {
    pub factor: f64,
    pub outcome: ReplayOutcome,
}

/// Re-execute a pipeline once per data-size factor. Factors are independent
/// and evaluated in parallel; rows come back in input order.
pub fn scale_data_replay(
    config: &RunConfig,
    script: &PipelineScript,
    factors: &[f64],
    parallelism: Parallelism,
) -> Result<Vec<ScaleRow>, ExperimentError> {
    let results = map_items(factors, parallelism, |&factor| {
        let options = ReplayOptions {
            data_factor: factor,
            substitutions: IndexMap::new(),
            parallelism: Parallelism::Sequential,
        };
        run_pipeline(config, script, &options).map(|outcome| ScaleRow { factor, outcome })
    });
    results.into_iter().collect()
}

/// Before/after table for an object-substitution replay (the model-size
/// transfer analogue: substitute a stronger base model, keep the pipeline).
#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub original: ReplayOutcome,
    pub substituted: ReplayOutcome,
}

pub fn transfer_model_replay(
    config: &RunConfig,
    script: &PipelineScript,
    substitutions: &IndexMap<String, String>,
) -> Result<TransferReport, ExperimentError> {
    let original = run_pipeline(config, script, &ReplayOptions::identity())?;
    let substituted = run_pipeline(
        config,
        script,
        &ReplayOptions {
            data_factor: 1.0,
            substitutions: substitutions.clone(),
            parallelism: Parallelism::default(),
        },
    )?;
    Ok(TransferReport {
        original,
        substituted,
    })
}

/// The random-policy ablation: the same loop with uniform selection over the
/// flat candidate list, no agent calls and no memory updates.
pub fn run_random_baseline(
    mut config: RunConfig,
    options: RunOptions,
) -> Result<Orchestrator, RunError> {
    config.controller = CONTROLLER_RANDOM.to_string();
    run(config, options)
}

/// All weight vectors on the unit simplex lattice with spacing `step`:
/// every coordinate a multiple of `step`, coordinates summing to 1, in
/// lexicographic order.
pub fn simplex_lattice(models: usize, step: f64) -> Result<Vec<Vec<f64>>, ExperimentError> {
    if step <= 0.0 || step > 1.0 {
        return Err(ExperimentError::BadGridStep(step));
    }
    let units = 1.0 / step;
    let n = units.round();
    if (units - n).abs() > 1e-9 {
        return Err(ExperimentError::BadGridStep(step));
    }
    let n = n as u64;
    let mut grid = Vec::new();
    let mut current = vec![0u64; models];
    fn rec(slot: usize, remaining: u64, step: f64, current: &mut Vec<u64>, grid: &mut Vec<Vec<f64>>) {
        if slot == current.len() - 1 {
            current[slot] = remaining;
            grid.push(current.iter().map(|&c| c as f64 * step).collect());
            return;
        }
        for units in 0..=remaining {
            current[slot] = units;
            rec(slot + 1, remaining - units, step, current, grid);
        }
    }
    rec(0, n, step, &mut current, &mut grid);
    Ok(grid)
}

/// One evaluated grid point.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub weights: Vec<f64>,
    pub scores: Vec<(String, f64)>,
    pub aggregate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSearchResult {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridSearchResult {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Merge the specialists into the base at every lattice weight vector and
/// score the results; the best row is the argmax with ties broken toward
/// the lexicographically smallest weights. Grid points are independent and
/// evaluated in parallel.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_ties(
    base: &SimModel,
    specialists: &[SimModel],
    grid_step: f64,
    density: f64,
    tasks: &[TaskSpec],
    rule: AggregationRule,
    evaluator: &dyn Evaluator,
    parallelism: Parallelism,
) -> Result<GridSearchResult, ExperimentError> {
    if specialists.len() < 2 {
        return Err(ExperimentError::TooFewSpecialists(specialists.len()));
    }
    let lattice = simplex_lattice(specialists.len(), grid_step)?;
    if lattice.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let weights_per_task: Vec<f64> = tasks.iter().map(|t| t.weight).collect();
    let refs: Vec<&SimModel> = specialists.iter().collect();
    let rows = map_items(&lattice, parallelism, |weights| {
        let merged = ties_merge(base, &refs, &MergeSpec::new(weights.clone(), density))?;
        let payload = Payload::Model(merged);
        let scores = evaluate("grid", &payload, tasks, evaluator, Parallelism::Sequential)?;
        let agg = aggregate(&scores.values(), &weights_per_task, rule)?;
        Ok::<GridRow, ExperimentError>(GridRow {
            weights: weights.clone(),
            scores: scores.0,
            aggregate: agg,
        })
    });
    let rows: Vec<GridRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let mut best = 0;
    for (index, row) in rows.iter().enumerate() {
        if row.aggregate > rows[best].aggregate {
            best = index;
        }
    }
    Ok(GridSearchResult { rows, best })
}
