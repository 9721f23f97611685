//! The four-phase iteration loop: enumerate, select, execute-and-evaluate,
//! update memory. One model, one trial record and (under the LLM policy)
//! one memory version per iteration; any mid-step failure rolls the state
//! back to the last completed iteration and can leave a resumable
//! checkpoint.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::action_space::{ActionSchema, PairMode};
use crate::agent::{
    AgentBackend, AgentError, AgentGateway, FnAgent, HttpAgent, Phase, ScriptedAgent,
};
use crate::checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
use crate::config::{
    ConfigError, RunConfig, CONTROLLER_LLM, CONTROLLER_PIPELINE, CONTROLLER_RANDOM,
    CONTROLLER_SCRIPTED,
};
use crate::evaluation::{aggregate, evaluate, EvalError, Evaluator, SimEvaluator, TaskSpec};
use crate::executor::{ExecError, ExecutorSet};
use crate::memory::{update_memory, MemoryState, TrialRecord};
use crate::policy::{select_action, PolicyError, PolicyState, SelectionContext};
use crate::registry::{generated_model_label, PipelineStep, Registry, RegistryError};
use crate::trace::{read_trace, TraceError, TraceEvent, TraceWriter, TRACE_VERSION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("iteration {step}: {source}")]
    Policy { step: u32, source: PolicyError },
    #[error("iteration {step}: agent failure: {source}")]
    Agent { step: u32, source: AgentError },
    #[error("iteration {step}: executor failure: {source}")]
    Exec { step: u32, source: ExecError },
    #[error("iteration {step}: evaluator failure: {source}")]
    Eval { step: u32, source: EvalError },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("all {0} configured iterations already completed")]
    BudgetExhausted(u32),
    #[error("model {0:?} not found in registry")]
    MissingModel(String),
}

/// Construction-time options: trace destination, checkpoint-on-failure
/// path, and test injection points for the agent backend and evaluator.
#[derive(Default)]
pub struct RunOptions {
    pub trace_path: Option<PathBuf>,
    pub append_trace: bool,
    /// Written when a hard mid-run failure aborts the loop.
    pub checkpoint_on_failure: Option<PathBuf>,
    pub backend: Option<Box<dyn AgentBackend>>,
    pub evaluator: Option<Arc<dyn Evaluator>>,
    pub artifacts_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn with_trace(path: PathBuf) -> Self {
        Self {
            trace_path: Some(path),
            ..Self::default()
        }
    }
}

/// Owns one run: configuration, object pool, policy, gateway, executors and
/// the accumulated state.
pub struct Orchestrator {
    config: RunConfig,
    schemas: Vec<ActionSchema>,
    pair_mode: PairMode,
    registry: Arc<RwLock<Registry>>,
    gateway: AgentGateway,
    policy: PolicyState,
    executors: ExecutorSet,
    evaluator: Arc<dyn Evaluator>,
    val_tasks: Vec<TaskSpec>,
    report_tasks: Vec<TaskSpec>,
    memories: Vec<MemoryState>,
    history: Vec<TrialRecord>,
    rng: ChaCha8Rng,
    trace: TraceWriter,
    checkpoint_on_failure: Option<PathBuf>,
    step: u32,
    completed_marker_written: bool,
}

impl Orchestrator {
    pub fn new(config: RunConfig, options: RunOptions) -> Result<Self, RunError> {
        if options.backend.is_some() {
            config.validate_assuming_backend()?;
        } else {
            config.validate()?;
        }
        let registry = Arc::new(RwLock::new(config.build_registry()?));
        Self::assemble(config, options, registry, Vec::new(), Vec::new(), None, 0, 0, 0)
    }

    /// Restore a run from a checkpoint; completing it afterwards yields a
    /// trace identical to an uninterrupted run.
    pub fn resume(checkpoint: Checkpoint, mut options: RunOptions) -> Result<Self, RunError> {
        let mut config = checkpoint.config;
        config.base_dir = checkpoint.base_dir;
        options.append_trace = true;
        let registry = Arc::new(RwLock::new(checkpoint.registry));
        let mut orch = Self::assemble(
            config,
            options,
            registry,
            checkpoint.history,
            checkpoint.memories,
            Some(checkpoint.rng),
            checkpoint.step,
            checkpoint.agent_calls,
            checkpoint.policy_cursor,
        )?;
        orch.gateway
            .fast_forward(checkpoint.agent_calls)
            .map_err(|source| RunError::Agent {
                step: checkpoint.step,
                source,
            })?;
        Ok(orch)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: RunConfig,
        options: RunOptions,
        registry: Arc<RwLock<Registry>>,
        history: Vec<TrialRecord>,
        memories: Vec<MemoryState>,
        rng: Option<ChaCha8Rng>,
        step: u32,
        _agent_calls: u64,
        policy_cursor: u64,
    ) -> Result<Self, RunError> {
        let schemas = config.schemas();
        let pair_mode = config.pair_mode();
        let val_tasks = config.validation_tasks()?;
        let report_tasks = config.report_tasks()?;
        let artifacts_dir = options
            .artifacts_dir
            .unwrap_or_else(|| std::env::temp_dir().join("ptsearch-artifacts"));
        let executors = config.executor_set(&artifacts_dir)?;
        let evaluator: Arc<dyn Evaluator> = options.evaluator.unwrap_or_else(|| {
            Arc::new(SimEvaluator {
                root: config.base_dir.clone(),
            })
        });

        let policy = match config.controller.as_str() {
            CONTROLLER_RANDOM => PolicyState::Random,
            CONTROLLER_PIPELINE => {
                let path = config
                    .policy_options
                    .pipeline_script
                    .clone()
                    .expect("validated");
                let resolved = match &config.base_dir {
                    Some(dir) => dir.join(&path),
                    None => PathBuf::from(&path),
                };
                let script = crate::experiments::PipelineScript::load(&resolved)
                    .map_err(|e| RunError::Policy {
                        step: 0,
                        source: PolicyError::UnknownAction(e.to_string()),
                    })?;
                PolicyState::Scripted {
                    plan: script.steps,
                    cursor: policy_cursor as usize,
                }
            }
            _ => PolicyState::Llm {
                parse_retries: config.policy_options.parse_retries,
            },
        };

        let backend: Box<dyn AgentBackend> = match options.backend {
            Some(backend) => backend,
            None => match config.controller.as_str() {
                CONTROLLER_LLM => Box::new(HttpAgent::new(
                    config.endpoint.clone().expect("validated"),
                )),
                CONTROLLER_SCRIPTED => {
                    let path = config
                        .policy_options
                        .agent_script
                        .clone()
                        .expect("validated");
                    let resolved = match &config.base_dir {
                        Some(dir) => dir.join(&path),
                        None => PathBuf::from(&path),
                    };
                    Box::new(ScriptedAgent::from_script_file(&resolved).map_err(|source| {
                        RunError::Agent { step: 0, source }
                    })?)
                }
                _ => Box::new(FnAgent(|_phase: Phase, _req: &_| {
                    Err(AgentError::Transport {
                        attempts: 0,
                        reason: "this policy makes no agent calls".to_string(),
                    })
                })),
            },
        };
        let model = config
            .controller_model
            .clone()
            .unwrap_or_else(|| "gpt-4o-2024-08-06".to_string());
        let mut gateway = AgentGateway::new(backend, &model);
        gateway.temperature = config.policy_options.temperature;
        gateway.max_tokens = config.policy_options.max_tokens;

        let trace = match &options.trace_path {
            Some(path) if options.append_trace => TraceWriter::append(path)?,
            Some(path) => TraceWriter::create(path)?,
            None => TraceWriter::disabled(),
        };
        let rng = rng.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(config.seed));
        let completed_marker_written = step >= config.total_timesteps && step > 0;

        let mut orch = Self {
            schemas,
            pair_mode,
            registry,
            gateway,
            policy,
            executors,
            evaluator,
            val_tasks,
            report_tasks,
            memories,
            history,
            rng,
            trace,
            checkpoint_on_failure: options.checkpoint_on_failure,
            step,
            completed_marker_written,
            config,
        };
        if !options.append_trace {
            orch.trace.write(&TraceEvent::RunStarted {
                version: TRACE_VERSION,
                seed: orch.config.seed,
                total_timesteps: orch.config.total_timesteps,
                controller: orch.config.controller.clone(),
            })?;
        }
        Ok(orch)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn history(&self) -> &[TrialRecord] {
        &self.history
    }

    pub fn memories(&self) -> &[MemoryState] {
        &self.memories
    }

    pub fn gateway(&self) -> &AgentGateway {
        &self.gateway
    }

    pub fn registry_handle(&self) -> Arc<RwLock<Registry>> {
        Arc::clone(&self.registry)
    }

    /// Swap the agent backend before the run starts (test fixtures).
    pub fn set_backend(&mut self, backend: Box<dyn AgentBackend>) {
        let mut gateway = AgentGateway::new(backend, &self.gateway.model);
        gateway.temperature = self.gateway.temperature;
        gateway.max_tokens = self.gateway.max_tokens;
        self.gateway = gateway;
    }

    /// The oracle fixtures mirror selection, so they need the same schema
    /// list, pair mode and executors the run uses.
    pub fn mirror_parts(&self) -> (Vec<ActionSchema>, PairMode, ExecutorSet, Vec<TaskSpec>) {
        (
            self.schemas.clone(),
            self.pair_mode,
            self.executors.clone(),
            self.val_tasks.clone(),
        )
    }

    /// Execute one full iteration. On failure every piece of run state is
    /// rolled back to the pre-step snapshot before the error surfaces.
    pub fn step(&mut self) -> Result<(), RunError> {
        if self.step >= self.config.total_timesteps {
            return Err(RunError::BudgetExhausted(self.config.total_timesteps));
        }
        let step = self.step + 1;
        let rng_before = self.rng.clone();
        let calls_before = self.gateway.calls();
        let trace_len_before = self.gateway.trace().len();
        let cursor_before = match &self.policy {
            PolicyState::Scripted { cursor, .. } => *cursor,
            _ => 0,
        };

        match self.try_step(step, trace_len_before) {
            Ok(()) => {
                self.step = step;
                Ok(())
            }
            Err(e) => {
                self.rng = rng_before;
                self.gateway.rollback(calls_before, trace_len_before);
                if let PolicyState::Scripted { cursor, .. } = &mut self.policy {
                    *cursor = cursor_before;
                }
                Err(e)
            }
        }
    }

    fn try_step(&mut self, step: u32, trace_len_before: usize) -> Result<(), RunError> {
        // Phase 1 + 2: enumerate over the current pool and select.
        let view = self.registry.read().expect("registry lock").pool_view();
        let memory_text = self
            .memories
            .last()
            .map(|m| m.text.clone())
            .unwrap_or_default();
        let ctx = SelectionContext {
            step,
            memory: &memory_text,
            schemas: &self.schemas,
            pool: &view,
            pair_mode: self.pair_mode,
        };
        let (candidate, selection) =
            select_action(&mut self.policy, &ctx, &mut self.gateway, &mut self.rng)
                .map_err(|source| RunError::Policy { step, source })?;

        // Phase 3: execute the action and score the produced model.
        let (produced, object_labels) = {
            let reg = self.registry.read().expect("registry lock");
            let produced = self
                .executors
                .produce(step, &candidate, &reg, &self.config.simulator)
                .map_err(|source| RunError::Exec { step, source })?;
            let labels = candidate
                .bindings
                .iter()
                .map(|id| reg.entry(*id).map(|e| e.label.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            (produced, labels)
        };
        let produced_label = generated_model_label(step, 0).expect("step >= 1");
        let scores = evaluate(
            &produced_label,
            &produced.payload,
            &self.val_tasks,
            self.evaluator.as_ref(),
            self.config.policy_options.parallelism,
        )
        .map_err(|source| RunError::Eval { step, source })?;
        let weights: Vec<f64> = self.val_tasks.iter().map(|t| t.weight).collect();
        let agg = aggregate(&scores.values(), &weights, self.config.score_aggregation)
            .map_err(|source| RunError::Eval { step, source })?;
        let trial = TrialRecord {
            step,
            action: candidate.schema.clone(),
            objects: object_labels,
            scores,
            aggregate: agg,
            produced: produced_label,
        };

        // Phase 4: memory update (LLM policy only).
        let memory = if matches!(self.policy, PolicyState::Llm { .. }) {
            let new = [trial.clone()];
            let (state, truncated) = update_memory(
                &mut self.gateway,
                &self.history,
                &self.memories,
                &new,
                self.config.policy_options.memory_window,
                self.config.policy_options.memory_task_scores,
            )
            .map_err(|source| RunError::Agent { step, source })?;
            Some((state, truncated))
        } else {
            None
        };

        // Commit: trace events, registry, history, memory — in that order,
        // after every fallible phase has succeeded.
        let agent_records: Vec<TraceEvent> = self.gateway.trace()[trace_len_before..]
            .iter()
            .map(|r| TraceEvent::AgentCall {
                step: r.iteration,
                phase: r.phase,
                attempt: r.attempt,
                prompt: r.prompt.clone(),
                response: r.response.clone(),
            })
            .collect();
        for event in agent_records.iter().filter(|e| {
            !matches!(e, TraceEvent::AgentCall { phase: Phase::MemoryUpdate, .. })
        }) {
            self.trace.write(event)?;
        }
        self.trace.write(&TraceEvent::Selection {
            step,
            action: trial.action.clone(),
            objects: trial.objects.clone(),
            retries: selection.retries,
            fallback: selection.fallback,
        })?;
        if let Some(log) = &produced.shell_log {
            self.trace.write(&TraceEvent::Shell {
                step,
                command: log.command.clone(),
                status: log.status,
                stdout: log.stdout.clone(),
                stderr: log.stderr.clone(),
            })?;
        }
        self.trace.write(&TraceEvent::Trial {
            step,
            action: trial.action.clone(),
            objects: trial.objects.clone(),
            scores: trial.scores.0.clone(),
            aggregate: trial.aggregate,
            produced: trial.produced.clone(),
        })?;
        for event in agent_records.iter().filter(|e| {
            matches!(e, TraceEvent::AgentCall { phase: Phase::MemoryUpdate, .. })
        }) {
            self.trace.write(event)?;
        }
        if let Some((state, truncated)) = &memory {
            self.trace.write(&TraceEvent::Memory {
                step,
                version: state.version,
                text: state.text.clone(),
                truncated: *truncated,
            })?;
        }

        self.registry
            .write()
            .expect("registry lock")
            .register_generated_model(step, 0, &candidate.schema, &candidate.bindings, produced.payload)?;
        self.history.push(trial);
        if let Some((state, _)) = memory {
            self.memories.push(state);
        }
        Ok(())
    }

    /// Run up to iteration `upto` (capped by the budget); writes the
    /// completion marker when the budget is reached.
    pub fn run_until(&mut self, upto: u32) -> Result<(), RunError> {
        let target = upto.min(self.config.total_timesteps);
        while self.step < target {
            if let Err(e) = self.step() {
                if let Some(path) = self.checkpoint_on_failure.clone() {
                    let _ = self.write_checkpoint(&path);
                }
                return Err(e);
            }
        }
        if self.step >= self.config.total_timesteps && !self.completed_marker_written {
            self.trace.write(&TraceEvent::RunCompleted { steps: self.step })?;
            self.completed_marker_written = true;
        }
        Ok(())
    }

    pub fn run_to_completion(&mut self) -> Result<(), RunError> {
        self.run_until(self.config.total_timesteps)
    }

    pub fn write_checkpoint(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            base_dir: self.config.base_dir.clone(),
            step: self.step,
            registry: self.registry.read().expect("registry lock").clone(),
            memories: self.memories.clone(),
            history: self.history.clone(),
            rng: self.rng.clone(),
            agent_calls: self.gateway.calls(),
            policy_cursor: match &self.policy {
                PolicyState::Scripted { cursor, .. } => *cursor as u64,
                _ => 0,
            },
        };
        checkpoint.save(path)
    }

    /// Evaluate the top-`k` generated models on the held-out report tasks
    /// and reconstruct their pipelines.
    pub fn report(&self, k: usize, window: usize) -> Result<RunReport, RunError> {
        let (ranked, truncated) = top_k(&self.history, k);
        let reg = self.registry.read().expect("registry lock");
        let weights: Vec<f64> = self.report_tasks.iter().map(|t| t.weight).collect();
        let mut top = Vec::with_capacity(ranked.len());
        for model in ranked {
            let entry = reg
                .lookup("models", &model.label)
                .ok_or_else(|| RunError::MissingModel(model.label.clone()))?;
            let test_scores = evaluate(
                &model.label,
                &entry.payload,
                &self.report_tasks,
                self.evaluator.as_ref(),
                self.config.policy_options.parallelism,
            )
            .map_err(|source| RunError::Eval {
                step: model.step,
                source,
            })?;
            let test_aggregate =
                aggregate(&test_scores.values(), &weights, self.config.score_aggregation)
                    .map_err(|source| RunError::Eval {
                        step: model.step,
                        source,
                    })?;
            let pipeline = reg.lineage_pipeline(entry.id)?;
            top.push(ReportEntry {
                rank: top.len() + 1,
                label: model.label,
                step: model.step,
                val_aggregate: model.aggregate,
                test_scores: test_scores.0,
                test_aggregate,
                pipeline,
            });
        }
        Ok(RunReport {
            window,
            windows: window_stats(&self.history, window),
            top,
            truncated,
        })
    }
}

/// Free-function form of the loop: build, run every configured iteration,
/// return the finished orchestrator.
pub fn run(config: RunConfig, options: RunOptions) -> Result<Orchestrator, RunError> {
    let mut orch = Orchestrator::new(config, options)?;
    orch.run_to_completion()?;
    Ok(orch)
}

/// Mean, max and population standard deviation of trial scores per
/// consecutive window (the last window may be partial).
pub fn window_stats(history: &[TrialRecord], window: usize) -> Vec<WindowStat> {
    assert!(window > 0, "window must be positive");
    history
        .chunks(window)
        .map(|chunk| {
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|t| t.aggregate).sum::<f64>() / n;
            let max = chunk
                .iter()
                .map(|t| t.aggregate)
                .fold(f64::NEG_INFINITY, f64::max);
            let variance = chunk
                .iter()
                .map(|t| (t.aggregate - mean).powi(2))
                .sum::<f64>()
                / n;
            WindowStat {
                start_step: chunk[0].step,
                len: chunk.len(),
                mean,
                max,
                std_dev: variance.sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStat {
    pub start_step: u32,
    pub len: usize,
    pub mean: f64,
    pub max: f64,
    pub std_dev: f64,
}

/// Generated models ranked by validation aggregate, descending, ties broken
/// by earlier step. Returns all models (flagged) when `k` exceeds the count.
pub fn top_k(history: &[TrialRecord], k: usize) -> (Vec<RankedModel>, bool) {
    let mut ranked: Vec<RankedModel> = history
        .iter()
        .map(|t| RankedModel {
            step: t.step,
            label: t.produced.clone(),
            aggregate: t.aggregate,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.aggregate
            .partial_cmp(&a.aggregate)
            .expect("scores are finite")
            .then(a.step.cmp(&b.step))
    });
    let truncated = k > ranked.len();
    ranked.truncate(k);
    (ranked, truncated)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedModel {
    pub step: u32,
    pub label: String,
    pub aggregate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub rank: usize,
    pub label: String,
    pub step: u32,
    pub val_aggregate: f64,
    pub test_aggregate: f64,
    pub test_scores: Vec<(String, f64)>,
    pub pipeline: Vec<PipelineStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub window: usize,
    pub windows: Vec<WindowStat>,
    pub top: Vec<ReportEntry>,
    pub truncated: bool,
}

/// Compare two trace files byte for byte (determinism checks).
pub fn traces_identical(a: &std::path::Path, b: &std::path::Path) -> std::io::Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

/// Count agent calls per phase in a trace file.
pub fn agent_call_counts(path: &std::path::Path) -> Result<(usize, usize, usize), TraceError> {
    let mut counts = (0, 0, 0);
    for event in read_trace(path)? {
        if let TraceEvent::AgentCall { phase, .. } = event {
            match phase {
                Phase::TypeSelection => counts.0 += 1,
                Phase::ObjectSelection => counts.1 += 1,
                Phase::MemoryUpdate => counts.2 += 1,
            }
        }
    }
    Ok(counts)
}
