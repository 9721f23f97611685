//! Agent-driven search over model post-training pipelines.
//!
//! The engine iterates a four-phase loop — enumerate candidate actions over
//! an object pool, have a policy pick one, execute and score the resulting
//! model, update the agent's textual memory — and records everything needed
//! to audit, checkpoint and replay a run. A fully specified simulated model
//! space makes the whole search verifiable at desk scale; shell executors
//! bridge to real training and merging toolchains.

pub mod action_space;
pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod evaluation;
pub mod executor;
pub mod experiments;
pub mod memory;
pub mod oracle;
pub mod orchestrator;
pub mod parallel;
pub mod policy;
pub mod registry;
pub mod sim;
pub mod ties;
pub mod trace;

pub use action_space::{
    count_candidates, enumerate_candidates, ActionCandidate, ActionSchema, PairMode, PlannedAction,
};
pub use agent::{AgentBackend, AgentGateway, AgentRequest, Phase, ScriptedAgent};
pub use checkpoint::Checkpoint;
pub use config::{ConfigError, RunConfig};
pub use evaluation::{aggregate, derive_weights, AggregationRule, ScoreVector, TaskSpec};
pub use executor::{sim_sft, ExecutorSet};
pub use experiments::{
    grid_search_ties, run_pipeline, run_random_baseline, scale_data_replay, simplex_lattice,
    transfer_model_replay, PipelineScript, ReplayOptions,
};
pub use memory::{format_history, update_memory, MemoryState, TrialRecord};
pub use oracle::GreedyOracleAgent;
pub use orchestrator::{run, top_k, window_stats, Orchestrator, RunError, RunOptions};
pub use parallel::Parallelism;
pub use registry::{generated_model_label, Payload, Registry};
pub use sim::{SimConstants, SimDataset, SimModel};
pub use ties::{ties_merge, MergeSpec};
