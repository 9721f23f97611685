//! Trial history and the agent's textual memory.
//!
//! History is append-only. After every trial the memory-update prompt gets
//! the full prior results, all prior memory texts and the new trial, and the
//! agent's raw output becomes the next memory — the text injected verbatim
//! into both selection prompts of the following iteration.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentError, AgentGateway, Phase};
use crate::evaluation::ScoreVector;
use crate::policy::{EMPTY_MEMORY, MEMORY_TEMPLATE};

/// One completed iteration: the action taken (with resolved labels), its
/// per-task scores, the aggregate fed back to the agent, and the label of
/// the model it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub step: u32,
    pub action: String,
    pub objects: Vec<String>,
    pub scores: ScoreVector,
    pub aggregate: f64,
    pub produced: String,
}

/// Agent-generated memory text; `version` is the iteration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub text: String,
    pub version: u32,
}

/// One line per trial:
/// `Step t: action(label_1, ..., label_n) -> label_out, score: x.xxx`.
pub fn format_history(records: &[TrialRecord]) -> String {
    format_history_detailed(records, false)
}

/// As [`format_history`], optionally appending per-task scores.
pub fn format_history_detailed(records: &[TrialRecord], per_task: bool) -> String {
    records
        .iter()
        .map(|r| {
            let mut line = format!(
                "Step {}: {}({}) -> {}, score: {:.3}",
                r.step,
                r.action,
                r.objects.join(", "),
                r.produced,
                r.aggregate
            );
            if per_task {
                let detail = r
                    .scores
                    .0
                    .iter()
                    .map(|(name, value)| format!("{name}: {value:.3}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                line.push_str(&format!(" ({detail})"));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rendered memory-update prompt plus whether the memory list was truncated
/// by the window cap.
pub fn render_memory_prompt(
    previous: &[TrialRecord],
    memories: &[MemoryState],
    new: &[TrialRecord],
    memory_window: Option<usize>,
    per_task: bool,
) -> (String, bool) {
    let previous_block = or_none(format_history_detailed(previous, per_task));
    let (kept, truncated) = match memory_window {
        Some(window) if memories.len() > window => (&memories[memories.len() - window..], true),
        _ => (memories, false),
    };
    let memories_block = or_none(
        kept.iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let new_block = or_none(format_history_detailed(new, per_task));
    let prompt = MEMORY_TEMPLATE
        .replace("<previous results>", &previous_block)
        .replace("<previous memories>", &memories_block)
        .replace("<new results>", &new_block);
    (prompt, truncated)
}

fn or_none(text: String) -> String {
    if text.is_empty() {
        EMPTY_MEMORY.to_string()
    } else {
        text
    }
}

/// Run the memory-update inference for the trial(s) in `new` and return the
/// agent's full output as the next memory (versioned by the latest step).
pub fn update_memory(
    gateway: &mut AgentGateway,
    previous: &[TrialRecord],
    memories: &[MemoryState],
    new: &[TrialRecord],
    memory_window: Option<usize>,
    per_task: bool,
) -> Result<(MemoryState, bool), AgentError> {
    let version = new.last().map(|r| r.step).unwrap_or(0);
    let (prompt, truncated) = render_memory_prompt(previous, memories, new, memory_window, per_task);
    let text = gateway.complete(version, Phase::MemoryUpdate, 0, &prompt)?;
    Ok((MemoryState { text, version }, truncated))
}
