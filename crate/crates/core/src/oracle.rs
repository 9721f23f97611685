//! Greedy one-step-lookahead agent backend.
//!
//! Stands in for a live LLM in acceptance runs: at type selection it
//! simulates every enumerable candidate, remembers the argmax, and answers
//! with that candidate's type; at object selection it answers the matching
//! slot indices. Deterministic, and it exercises the real prompt/parse path
//! end to end.

use std::sync::{Arc, RwLock};

use crate::action_space::{enumerate_candidates, ActionCandidate, ActionSchema, PairMode};
use crate::agent::{AgentBackend, AgentError, AgentRequest, Phase};
use crate::evaluation::{aggregate, evaluate, AggregationRule, SimEvaluator, TaskSpec};
use crate::executor::ExecutorSet;
use crate::parallel::Parallelism;
use crate::registry::Registry;
use crate::sim::SimConstants;

pub struct GreedyOracleAgent {
    registry: Arc<RwLock<Registry>>,
    schemas: Vec<ActionSchema>,
    pair_mode: PairMode,
    executors: ExecutorSet,
    constants: SimConstants,
    tasks: Vec<TaskSpec>,
    rule: AggregationRule,
    pending: Option<(ActionCandidate, f64)>,
}

impl GreedyOracleAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        registry: Arc<RwLock<Registry>>,
        schemas: Vec<ActionSchema>,
        pair_mode: PairMode,
        executors: ExecutorSet,
        constants: SimConstants,
        tasks: Vec<TaskSpec>,
        rule: AggregationRule,
    ) -> Self {
        Self {
            registry,
            schemas,
            pair_mode,
            executors,
            constants,
            tasks,
            rule,
            pending: None,
        }
    }

    fn oracle_error(reason: impl Into<String>) -> AgentError {
        AgentError::Transport {
            attempts: 1,
            reason: reason.into(),
        }
    }

    /// Expected score of every candidate over the current pool plus the
    /// strict argmax, ties kept at the earlier candidate.
    pub fn lookahead(&self) -> Result<(ActionCandidate, f64), AgentError> {
        let registry = self.registry.read().expect("registry lock");
        let view = registry.pool_view();
        let candidates = enumerate_candidates(&self.schemas, &view, self.pair_mode);
        if candidates.is_empty() {
            return Err(Self::oracle_error("no candidates to look ahead over"));
        }
        let weights: Vec<f64> = self.tasks.iter().map(|t| t.weight).collect();
        let evaluator = SimEvaluator::default();
        let mut best: Option<(ActionCandidate, f64)> = None;
        for candidate in candidates {
            let produced = self
                .executors
                .produce(1, &candidate, &registry, &self.constants)
                .map_err(|e| Self::oracle_error(e.to_string()))?;
            let scores = evaluate(
                "lookahead",
                &produced.payload,
                &self.tasks,
                &evaluator,
                Parallelism::Sequential,
            )
            .map_err(|e| Self::oracle_error(e.to_string()))?;
            let score = aggregate(&scores.values(), &weights, self.rule)
                .map_err(|e| Self::oracle_error(e.to_string()))?;
            if best.as_ref().map(|(_, s)| score > *s).unwrap_or(true) {
                best = Some((candidate, score));
            }
        }
        Ok(best.expect("nonempty candidates"))
    }
}

impl AgentBackend for GreedyOracleAgent {
    fn complete(&mut self, phase: Phase, _request: &AgentRequest) -> Result<String, AgentError> {
        match phase {
            Phase::TypeSelection => {
                let (candidate, score) = self.lookahead()?;
                let registry = self.registry.read().expect("registry lock");
                let view = registry.pool_view();
                // Mirror the policy's presented type list: schemas with at
                // least one candidate, in declaration order.
                let all = enumerate_candidates(&self.schemas, &view, self.pair_mode);
                let live: Vec<&ActionSchema> = self
                    .schemas
                    .iter()
                    .filter(|s| all.iter().any(|c| c.schema == s.name))
                    .collect();
                let index = live
                    .iter()
                    .position(|s| s.name == candidate.schema)
                    .ok_or_else(|| Self::oracle_error("chosen schema vanished"))?;
                self.pending = Some((candidate, score));
                Ok(format!("Selected Action Type NUMBER: {index}"))
            }
            Phase::ObjectSelection => {
                let (candidate, _) = self
                    .pending
                    .take()
                    .ok_or_else(|| Self::oracle_error("object selection before type selection"))?;
                let registry = self.registry.read().expect("registry lock");
                let view = registry.pool_view();
                let schema = self
                    .schemas
                    .iter()
                    .find(|s| s.name == candidate.schema)
                    .ok_or_else(|| Self::oracle_error("schema missing"))?;
                let mut indices = Vec::with_capacity(schema.slots.len());
                for (kind, id) in schema.slots.iter().zip(&candidate.bindings) {
                    let position = view
                        .objects(kind)
                        .iter()
                        .position(|(candidate_id, _)| candidate_id == id)
                        .ok_or_else(|| Self::oracle_error("binding missing from pool"))?;
                    indices.push(position.to_string());
                }
                Ok(format!("[[{}]]", indices.join(", ")))
            }
            Phase::MemoryUpdate => {
                let expected = self
                    .pending
                    .as_ref()
                    .map(|(_, s)| *s)
                    .unwrap_or(f64::NAN);
                let _ = expected;
                Ok("Greedy lookahead policy: exploit the current argmax action.".to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Payload, Provenance};
    use crate::sim::{SimDataset, SimModel};

    #[test]
    fn oracle_picks_the_argmax_candidate() {
        let mut registry = Registry::new();
        registry
            .register_object(
                "models",
                "base",
                Payload::Model(SimModel::new(vec![0.0, 0.0])),
                Provenance::Initial,
            )
            .unwrap();
        for (label, targets, coverage) in [
            ("weak", vec![0.3, 0.0], vec![1u8, 0]),
            ("strong", vec![0.0, 0.9], vec![0, 1]),
        ] {
            registry
                .register_object(
                    "sft_dataset",
                    label,
                    Payload::Dataset(SimDataset::new(targets, coverage, 100_000)),
                    Provenance::Initial,
                )
                .unwrap();
        }
        registry
            .register_object("sft_lr", "1e-5", Payload::Scalar(1e-5), Provenance::Initial)
            .unwrap();

        let registry = Arc::new(RwLock::new(registry));
        let schemas = vec![ActionSchema::new("sft", &["models", "sft_dataset", "sft_lr"])];
        let tasks: Vec<TaskSpec> = ["t0", "t1"]
            .iter()
            .map(|n| TaskSpec::from_pair(n, "acc").unwrap())
            .collect();
        let mut oracle = GreedyOracleAgent::new(
            Arc::clone(&registry),
            schemas,
            PairMode::Unordered,
            ExecutorSet::simulated(),
            SimConstants::default(),
            tasks,
            AggregationRule::Mean,
        );
        let request = AgentRequest {
            prompt: "p".into(),
            temperature: 0.0,
            max_tokens: 16,
            model: "oracle".into(),
        };
        let type_answer = oracle.complete(Phase::TypeSelection, &request).unwrap();
        assert_eq!(type_answer, "Selected Action Type NUMBER: 0");
        let object_answer = oracle.complete(Phase::ObjectSelection, &request).unwrap();
        // "strong" (index 1) teaches 0.9 on skill 1, beating "weak".
        assert_eq!(object_answer, "[[0, 1, 0]]");
    }
}
