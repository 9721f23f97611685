//! Action selection: prompt rendering, output parsing, and the policies
//! that turn memory plus candidates into one chosen action.
//!
//! The LLM policy runs the two-stage protocol — one inference picks the
//! action type, a second picks all objects at once — over templates shipped
//! verbatim in `templates/`. Parsing is deliberately forgiving about prose
//! and strict about ranges; parse failures retry and then fall back to a
//! uniform random choice, flagged in the trace.

use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{
    enumerate_candidates, ActionCandidate, ActionSchema, PairMode, PlannedAction,
};
use crate::agent::{AgentError, AgentGateway, Phase};
use crate::registry::PoolView;

/// Templates as shipped; the placeholder tokens are the only substitution
/// points.
pub const TYPE_TEMPLATE: &str = include_str!("../templates/action_type_selection.txt");
pub const OBJECT_TEMPLATE: &str = include_str!("../templates/object_selection.txt");
pub const MEMORY_TEMPLATE: &str = include_str!("../templates/memory_update.txt");

/// Sentinel substituted for an empty memory, making the templates'
/// "If the Self-Reflections are not provided" branch deterministic.
pub const EMPTY_MEMORY: &str = "None";

/// Parse-retry budget of the LLM policy before it falls back to random.
pub const DEFAULT_PARSE_RETRIES: u32 = 3;

#[derive(Debug, Error)]
#[error("{kind} in agent output: {text:?}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    NoInteger,
    OutOfRange,
    NoBracketGroup,
    WrongArity,
    SelfPair,
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParseErrorKind::NoInteger => "no standalone integer",
            ParseErrorKind::OutOfRange => "index out of range",
            ParseErrorKind::NoBracketGroup => "no [[ ... ]] selection group",
            ParseErrorKind::WrongArity => "wrong number of indices",
            ParseErrorKind::SelfPair => "same object selected for both merge slots",
        };
        f.write_str(s)
    }
}

fn parse_error(kind: ParseErrorKind, text: &str) -> ParseError {
    ParseError {
        kind,
        text: text.to_string(),
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("no candidate actions exist over the current pool")]
    NoCandidates,
    #[error("pipeline script exhausted at step {step}")]
    PlanExhausted { step: u32 },
    #[error("unknown action type {0:?} in pipeline script")]
    UnknownAction(String),
    #[error("action {action:?} takes {expected} objects, script supplies {got}")]
    PlanArity {
        action: String,
        expected: usize,
        got: usize,
    },
    #[error("no object labeled {label:?} of kind {kind:?} in the pool")]
    UnknownLabel { label: String, kind: String },
}

/// Substitute memory into `<reflection>` and a numbered type list into
/// `<action_types>`; everything else is the template verbatim.
pub fn render_type_prompt(memory: &str, types: &[String]) -> String {
    let list = types
        .iter()
        .enumerate()
        .map(|(i, name)| format!("{i}: {name}"))
        .collect::<Vec<_>>()
        .join("\n");
    TYPE_TEMPLATE
        .replace("<reflection>", reflection(memory))
        .replace("<action_types>", &list)
}

/// Substitute memory and per-slot candidate blocks. Each slot renders as a
/// kind header followed by `j: label` lines numbered from 0, in schema slot
/// order.
pub fn render_object_prompt(memory: &str, slots: &[(String, Vec<String>)]) -> String {
    let blocks = slots
        .iter()
        .map(|(kind, labels)| {
            let lines = labels
                .iter()
                .enumerate()
                .map(|(j, label)| format!("{j}: {label}"))
                .collect::<Vec<_>>()
                .join("\n");
            format!("{kind}:\n{lines}")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    OBJECT_TEMPLATE
        .replace("<reflection>", reflection(memory))
        .replace("<object_cands>", &blocks)
}

fn reflection(memory: &str) -> &str {
    if memory.is_empty() {
        EMPTY_MEMORY
    } else {
        memory
    }
}

/// Last maximal digit run not attached to a word character. Numbers glued to
/// identifiers ("gpt-4o") do not count; label fragments like "0--3--0" do,
/// which is why the range check below matters.
fn last_standalone_integer(text: &str) -> Option<u64> {
    let bytes = text.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut best = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let clean_before = start == 0 || !is_word(bytes[start - 1]);
            let clean_after = i == bytes.len() || !is_word(bytes[i]);
            if clean_before && clean_after {
                if let Ok(v) = text[start..i].parse() {
                    best = Some(v);
                }
            }
        } else {
            i += 1;
        }
    }
    best
}

/// Extract the selected type index: the last standalone integer, required to
/// lie in `0..n_types`.
pub fn parse_type_selection(text: &str, n_types: usize) -> Result<usize, ParseError> {
    let value =
        last_standalone_integer(text).ok_or_else(|| parse_error(ParseErrorKind::NoInteger, text))?;
    if (value as usize) < n_types {
        Ok(value as usize)
    } else {
        Err(parse_error(ParseErrorKind::OutOfRange, text))
    }
}

static BRACKET_GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\[\s*[0-9]+(?:\s*,\s*[0-9]+)*\s*\]\]").expect("static regex compiles")
});

/// Extract the selected object indices: the last `[[ i1, i2, ... ]]` group,
/// whitespace-tolerant, exactly one index per slot and each within range.
pub fn parse_object_selection(text: &str, slot_sizes: &[usize]) -> Result<Vec<usize>, ParseError> {
    let group = BRACKET_GROUP
        .find_iter(text)
        .last()
        .ok_or_else(|| parse_error(ParseErrorKind::NoBracketGroup, text))?;
    let inner = &text[group.start() + 2..group.end() - 2];
    let indices: Vec<usize> = inner
        .split(',')
        .map(|part| part.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_error(ParseErrorKind::NoBracketGroup, text))?;
    if indices.len() != slot_sizes.len() {
        return Err(parse_error(ParseErrorKind::WrongArity, text));
    }
    for (index, size) in indices.iter().zip(slot_sizes) {
        if index >= size {
            return Err(parse_error(ParseErrorKind::OutOfRange, text));
        }
    }
    Ok(indices)
}

/// Selection policy state. The scripted policy carries its plan and cursor
/// so it can be checkpointed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PolicyState {
    Llm { parse_retries: u32 },
    Random,
    Scripted { plan: Vec<PlannedAction>, cursor: usize },
}

/// What happened during one selection, for auditing.
#[derive(Debug, Clone, Default)]
pub struct SelectionTrace {
    pub type_index: Option<usize>,
    pub object_indices: Vec<usize>,
    pub retries: u32,
    pub fallback: bool,
}

/// Everything a selection can see: the pool snapshot plus rendering inputs.
pub struct SelectionContext<'a> {
    pub step: u32,
    pub memory: &'a str,
    pub schemas: &'a [ActionSchema],
    pub pool: &'a PoolView,
    pub pair_mode: PairMode,
}

/// Choose one action. The LLM policy performs the two-stage protocol via
/// `gateway`; the random policy draws uniformly over the flat candidate
/// list; the scripted policy resolves the next planned action by label.
pub fn select_action<R: Rng>(
    policy: &mut PolicyState,
    ctx: &SelectionContext<'_>,
    gateway: &mut AgentGateway,
    rng: &mut R,
) -> Result<(ActionCandidate, SelectionTrace), PolicyError> {
    let candidates = enumerate_candidates(ctx.schemas, ctx.pool, ctx.pair_mode);
    if candidates.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    match policy {
        PolicyState::Random => {
            let index = rng.gen_range(0..candidates.len());
            Ok((candidates[index].clone(), SelectionTrace::default()))
        }
        PolicyState::Scripted { plan, cursor } => {
            let planned = plan
                .get(*cursor)
                .ok_or(PolicyError::PlanExhausted { step: ctx.step })?
                .clone();
            *cursor += 1;
            let candidate = resolve_planned(&planned, ctx)?;
            Ok((candidate, SelectionTrace::default()))
        }
        PolicyState::Llm { parse_retries } => {
            llm_select(*parse_retries, ctx, gateway, rng, &candidates)
        }
    }
}

/// Resolve a label-addressed action against the pool, canonicalizing
/// unordered merge pairs by registration order.
pub fn resolve_planned(
    planned: &PlannedAction,
    ctx: &SelectionContext<'_>,
) -> Result<ActionCandidate, PolicyError> {
    let schema = ctx
        .schemas
        .iter()
        .find(|s| s.name == planned.action)
        .ok_or_else(|| PolicyError::UnknownAction(planned.action.clone()))?;
    if planned.objects.len() != schema.slots.len() {
        return Err(PolicyError::PlanArity {
            action: planned.action.clone(),
            expected: schema.slots.len(),
            got: planned.objects.len(),
        });
    }
    let mut bindings = Vec::with_capacity(schema.slots.len());
    for (kind, label) in schema.slots.iter().zip(&planned.objects) {
        let id = ctx
            .pool
            .objects(kind)
            .iter()
            .find(|(_, l)| l == label)
            .map(|(id, _)| *id)
            .ok_or_else(|| PolicyError::UnknownLabel {
                label: label.clone(),
                kind: kind.clone(),
            })?;
        bindings.push(id);
    }
    let mut candidate = ActionCandidate {
        schema: schema.name.clone(),
        bindings,
    };
    if ctx.pair_mode == PairMode::Unordered {
        canonicalize_groups(schema, &mut candidate);
    }
    Ok(candidate)
}

/// Sort bindings of repeated same-kind slots by id so unordered pairs have
/// one canonical form.
fn canonicalize_groups(schema: &ActionSchema, candidate: &mut ActionCandidate) {
    let mut done: Vec<&str> = Vec::new();
    for kind in &schema.slots {
        if done.contains(&kind.as_str()) {
            continue;
        }
        done.push(kind);
        let positions: Vec<usize> = schema
            .slots
            .iter()
            .enumerate()
            .filter(|(_, k)| *k == kind)
            .map(|(p, _)| p)
            .collect();
        if positions.len() > 1 {
            let mut ids: Vec<_> = positions.iter().map(|&p| candidate.bindings[p]).collect();
            ids.sort();
            for (&p, id) in positions.iter().zip(ids) {
                candidate.bindings[p] = id;
            }
        }
    }
}

fn llm_select<R: Rng>(
    parse_retries: u32,
    ctx: &SelectionContext<'_>,
    gateway: &mut AgentGateway,
    rng: &mut R,
    candidates: &[ActionCandidate],
) -> Result<(ActionCandidate, SelectionTrace), PolicyError> {
    let mut trace = SelectionTrace::default();

    // Present only types that currently have at least one candidate.
    let live: Vec<&ActionSchema> = ctx
        .schemas
        .iter()
        .filter(|s| candidates.iter().any(|c| c.schema == s.name))
        .collect();
    let names: Vec<String> = live.iter().map(|s| s.name.clone()).collect();
    let type_prompt = render_type_prompt(ctx.memory, &names);

    let mut chosen_type: Option<usize> = None;
    for attempt in 0..=parse_retries {
        let text = gateway.complete(ctx.step, Phase::TypeSelection, attempt, &type_prompt)?;
        match parse_type_selection(&text, names.len()) {
            Ok(index) => {
                chosen_type = Some(index);
                break;
            }
            Err(_) => trace.retries += 1,
        }
    }
    let Some(type_index) = chosen_type else {
        return Ok((fallback(rng, candidates, &mut trace), trace));
    };
    trace.type_index = Some(type_index);
    let schema = live[type_index];

    let slots: Vec<(String, Vec<String>)> = schema
        .slots
        .iter()
        .map(|kind| {
            let labels = ctx
                .pool
                .objects(kind)
                .iter()
                .map(|(_, l)| l.clone())
                .collect();
            (kind.clone(), labels)
        })
        .collect();
    let sizes: Vec<usize> = slots.iter().map(|(_, labels)| labels.len()).collect();
    let object_prompt = render_object_prompt(ctx.memory, &slots);

    for attempt in 0..=parse_retries {
        let text = gateway.complete(ctx.step, Phase::ObjectSelection, attempt, &object_prompt)?;
        match parse_object_selection(&text, &sizes).and_then(|indices| {
            build_candidate(schema, ctx, &indices, &text).map(|c| (indices, c))
        }) {
            Ok((indices, candidate)) => {
                trace.object_indices = indices;
                return Ok((candidate, trace));
            }
            Err(_) => trace.retries += 1,
        }
    }
    Ok((fallback(rng, candidates, &mut trace), trace))
}

/// Turn per-slot indices into a candidate, canonicalizing unordered groups
/// and rejecting self-pairs (they never appear in the enumerated list).
fn build_candidate(
    schema: &ActionSchema,
    ctx: &SelectionContext<'_>,
    indices: &[usize],
    text: &str,
) -> Result<ActionCandidate, ParseError> {
    let mut candidate = ActionCandidate {
        schema: schema.name.clone(),
        bindings: schema
            .slots
            .iter()
            .zip(indices)
            .map(|(kind, &i)| ctx.pool.objects(kind)[i].0)
            .collect(),
    };
    if ctx.pair_mode == PairMode::Unordered {
        let before = candidate.bindings.clone();
        canonicalize_groups(schema, &mut candidate);
        let mut sorted = candidate.bindings.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != before.len() {
            // Duplicate binding inside a symmetric group.
            let mut per_kind: Vec<(&str, Vec<_>)> = Vec::new();
            for (kind, id) in schema.slots.iter().zip(&candidate.bindings) {
                match per_kind.iter_mut().find(|(k, _)| *k == kind.as_str()) {
                    Some((_, v)) => v.push(*id),
                    None => per_kind.push((kind, vec![*id])),
                }
            }
            for (_, ids) in per_kind {
                let mut deduped = ids.clone();
                deduped.sort();
                deduped.dedup();
                if deduped.len() != ids.len() {
                    return Err(parse_error(ParseErrorKind::SelfPair, text));
                }
            }
        }
    }
    Ok(candidate)
}

fn fallback<R: Rng>(
    rng: &mut R,
    candidates: &[ActionCandidate],
    trace: &mut SelectionTrace,
) -> ActionCandidate {
    trace.fallback = true;
    candidates[rng.gen_range(0..candidates.len())].clone()
}
