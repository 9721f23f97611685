//! Shared fixtures for integration tests: desk-scale configs over the
//! simulated model space.

use ptsearch::RunConfig;

/// Config shaped like the standard example: 4 models (one of them the
/// base), 4 datasets (three specialists' data plus the mixture), one lr,
/// one weight tuple, one density — 22 candidates at step 1.
pub fn standard_config(controller: &str, total_timesteps: u32) -> RunConfig {
    serde_json::from_value(standard_config_json(controller, total_timesteps)).unwrap()
}

pub fn standard_config_json(controller: &str, total_timesteps: u32) -> serde_json::Value {
    serde_json::json!({
        "seed": 42,
        "total_timesteps": total_timesteps,
        "controller": controller,
        "controller_model": "scripted-agent",
        "objects": {
            "base_models": [{"label": "gemma-2-2b", "skills": [0.0, 0.0, 0.0]}],
            "models": [
                {"label": "gemma-2-2b--gsm8k_1k", "skills": [0.57, 0.0, 0.0]},
                {"label": "gemma-2-2b--commonsense_qa_1k", "skills": [0.0, 0.62, 0.0]},
                {"label": "gemma-2-2b--trivia_qa_1k_w_context", "skills": [0.0, 0.0, 0.66]},
                {"label": "gemma-2-2b", "skills": [0.0, 0.0, 0.0]}
            ],
            "sft_dataset": [
                {"label": "gsm8k_1k", "targets": [0.8, 0.0, 0.0], "coverage": [1, 0, 0], "examples": 1000},
                {"label": "commonsense_qa_1k", "targets": [0.0, 0.75, 0.0], "coverage": [0, 1, 0], "examples": 1000},
                {"label": "trivia_qa_1k_w_context", "targets": [0.0, 0.0, 0.78], "coverage": [0, 0, 1], "examples": 1000},
                {"label": "gsm1k_cqa1k_tqa1k", "targets": [0.8, 0.75, 0.78], "coverage": [1, 1, 1], "examples": 3000}
            ],
            "sft_lr": [0.000001],
            "ties_weights": [[0.5, 0.5]],
            "ties_density": [0.5]
        },
        "action_types": {
            "sft": ["models", "sft_dataset", "sft_lr"],
            "ties_merging": ["base_models", "models", "models", "ties_weights", "ties_density"]
        },
        "eval_tasks": [["gsm8k", "acc"], ["commonsenseqa", "acc"], ["trivia_qa_w_context", "acc"]],
        "score_aggregation": "mean"
    })
}

/// Responses that keep a scripted run alive no matter how the pool grows:
/// type 0 is always sft, `[[0, 0, 0]]` is always in range.
pub fn evergreen_responses() -> Vec<String> {
    vec![
        "0".to_string(),
        "[[0, 0, 0]]".to_string(),
        "noted; keep training the first model".to_string(),
    ]
}
