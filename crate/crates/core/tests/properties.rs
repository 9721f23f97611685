//! Property suites for the core invariants: label grammar, enumeration
//! against counting, aggregation algebra, TIES structure, and the monotone
//! training dynamics.

use proptest::prelude::*;
use ptsearch::action_space::{count_candidates, enumerate_candidates, ActionSchema, PairMode};
use ptsearch::evaluation::{aggregate, AggregationRule};
use ptsearch::policy::parse_object_selection;
use ptsearch::registry::{generated_model_label, parse_generated_label, Payload, Provenance, Registry};
use ptsearch::sim::{SimConstants, SimDataset, SimModel};
use ptsearch::ties::{ties_merge, trim_count, MergeSpec};
use ptsearch::sim_sft;

fn pool(models: usize, datasets: usize, lrs: usize, bases: usize, weights: usize, densities: usize) -> Registry {
    let mut reg = Registry::new();
    let mut add = |kind: &str, count: usize, payload: fn(usize) -> Payload| {
        for i in 0..count {
            reg.register_object(kind, &format!("{kind}-{i}"), payload(i), Provenance::Initial)
                .unwrap();
        }
    };
    add("models", models, |_| Payload::Model(SimModel::new(vec![0.0])));
    add("sft_dataset", datasets, |_| {
        Payload::Dataset(SimDataset::new(vec![0.5], vec![1], 100))
    });
    add("sft_lr", lrs, |_| Payload::Scalar(1e-6));
    add("base_models", bases, |_| Payload::Model(SimModel::new(vec![0.0])));
    add("ties_weights", weights, |_| Payload::Tuple(vec![0.5, 0.5]));
    add("ties_density", densities, |_| Payload::Scalar(0.5));
    reg
}

fn shipped_schemas() -> Vec<ActionSchema> {
    vec![
        ActionSchema::new("sft", &["models", "sft_dataset", "sft_lr"]),
        ActionSchema::new(
            "ties_merging",
            &["base_models", "models", "models", "ties_weights", "ties_density"],
        ),
    ]
}

proptest! {
    #[test]
    fn generated_labels_round_trip(step in 1u32..100_000, index in 0u32..1_000) {
        let label = generated_model_label(step, index).unwrap();
        prop_assert!(regex::Regex::new(r"^0--[0-9]+--[0-9]+$").unwrap().is_match(&label));
        prop_assert_eq!(parse_generated_label(&label), Some((step, index)));
    }

    #[test]
    fn enumeration_length_matches_count_and_is_type_correct(
        models in 0usize..8,
        datasets in 0usize..6,
        lrs in 0usize..3,
        bases in 0usize..2,
        weights in 0usize..2,
        densities in 0usize..2,
        ordered in any::<bool>(),
    ) {
        let reg = pool(models, datasets, lrs, bases, weights, densities);
        let view = reg.pool_view();
        let schemas = shipped_schemas();
        let mode = if ordered { PairMode::Ordered } else { PairMode::Unordered };
        let candidates = enumerate_candidates(&schemas, &view, mode);
        let counted = count_candidates(&schemas, |k| view.size(k), mode);
        prop_assert_eq!(candidates.len() as u64, counted);

        // Type correctness: each binding's kind matches its slot.
        for candidate in &candidates {
            let schema = schemas.iter().find(|s| s.name == candidate.schema).unwrap();
            prop_assert_eq!(schema.slots.len(), candidate.bindings.len());
            for (kind, id) in schema.slots.iter().zip(&candidate.bindings) {
                prop_assert_eq!(&reg.entry(*id).unwrap().kind, kind);
            }
        }

        // Determinism and no duplicates.
        let again = enumerate_candidates(&schemas, &view, mode);
        prop_assert_eq!(&candidates, &again);
        let mut dedup = candidates.clone();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), candidates.len());
    }

    #[test]
    fn weighted_sum_is_linear(
        x in prop::collection::vec(0.0f64..1.0, 3),
        y in prop::collection::vec(0.0f64..1.0, 3),
        a in 0.0f64..2.0,
        b in 0.0f64..2.0,
    ) {
        let w = vec![0.3, 1.0, 0.5];
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = aggregate(&combo, &w, AggregationRule::WeightedSum).unwrap();
        let rhs = a * aggregate(&x, &w, AggregationRule::WeightedSum).unwrap()
            + b * aggregate(&y, &w, AggregationRule::WeightedSum).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn mean_rule_is_a_convex_combination_of_scores(
        raw in prop::collection::vec(0.0f64..1.0, 1..6),
        maxes in prop::collection::vec(0.5f64..10.0, 6),
    ) {
        // Weighted mean with weights alpha / sum(alpha): always between the
        // smallest and largest raw score.
        let scores: Vec<f64> = raw.iter().zip(&maxes).map(|(r, m)| r * m).collect();
        let weights: Vec<f64> = maxes.iter().take(scores.len()).map(|m| 1.0 / m).collect();
        let mean = aggregate(&scores, &weights, AggregationRule::Mean).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= lo - 1e-12 && mean <= hi + 1e-12);
    }

    #[test]
    fn mean_rule_stays_in_unit_interval_for_unit_max_tasks(
        scores in prop::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        // The default configuration: accuracy metrics with max 1, weights 1.
        let weights = vec![1.0; scores.len()];
        let mean = aggregate(&scores, &weights, AggregationRule::Mean).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&mean));
    }

    #[test]
    fn rules_rank_models_identically(
        table in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..8),
    ) {
        let w = vec![0.2, 1.0, 0.7];
        let argmax = |rule: AggregationRule| {
            let mut best = 0;
            for (i, scores) in table.iter().enumerate() {
                if aggregate(scores, &w, rule).unwrap() > aggregate(&table[best], &w, rule).unwrap() {
                    best = i;
                }
            }
            best
        };
        prop_assert_eq!(argmax(AggregationRule::WeightedSum), argmax(AggregationRule::Mean));
    }

    #[test]
    fn ties_output_respects_the_elected_sign(
        base in prop::collection::vec(-0.5f64..0.5, 6),
        deltas in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 6), 2..4),
        density in 0.0f64..=1.0,
    ) {
        let base = SimModel::new(base);
        let models: Vec<SimModel> = deltas
            .iter()
            .map(|d| SimModel::new(base.skills.iter().zip(d).map(|(b, d)| b + d).collect()))
            .collect();
        let refs: Vec<&SimModel> = models.iter().collect();
        let weights = vec![1.0 / refs.len() as f64; refs.len()];
        let spec = MergeSpec::new(weights.clone(), density);
        let merged = ties_merge(&base, &refs, &spec).unwrap();

        // Recompute the electorate independently per coordinate.
        let keep = trim_count(density, base.dim());
        let trimmed: Vec<Vec<f64>> = models
            .iter()
            .map(|m| {
                let tau: Vec<f64> = m.skills.iter().zip(&base.skills).map(|(s, b)| s - b).collect();
                let mut order: Vec<usize> = (0..tau.len()).collect();
                order.sort_by(|&a, &b| tau[b].abs().partial_cmp(&tau[a].abs()).unwrap().then(a.cmp(&b)));
                let mut out = vec![0.0; tau.len()];
                for &i in order.iter().take(keep) {
                    out[i] = tau[i];
                }
                out
            })
            .collect();
        for k in 0..base.dim() {
            let elect: f64 = trimmed.iter().zip(&weights).map(|(t, w)| w * t[k]).sum();
            let mu = merged.skills[k] - base.skills[k];
            if mu != 0.0 {
                prop_assert!(mu.signum() == elect.signum(), "coordinate {k}: mu {mu} vs elect {elect}");
            }
        }
    }

    #[test]
    fn ties_is_permutation_equivariant(
        deltas in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 5), 3),
        density in 0.0f64..=1.0,
    ) {
        let base = SimModel::new(vec![0.1; 5]);
        let models: Vec<SimModel> = deltas
            .iter()
            .map(|d| SimModel::new(base.skills.iter().zip(d).map(|(b, d)| b + d).collect()))
            .collect();
        let weights = vec![0.5, 0.3, 0.2];
        let forward = ties_merge(
            &base,
            &models.iter().collect::<Vec<_>>(),
            &MergeSpec::new(weights.clone(), density),
        )
        .unwrap();
        let permuted_models: Vec<&SimModel> = vec![&models[2], &models[0], &models[1]];
        let permuted = ties_merge(
            &base,
            &permuted_models,
            &MergeSpec::new(vec![0.2, 0.5, 0.3], density),
        )
        .unwrap();
        for (a, b) in forward.skills.iter().zip(&permuted.skills) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_consensus_is_idempotent(
        v in prop::collection::vec(-0.5f64..0.5, 4),
        copies in 2usize..5,
    ) {
        let base = SimModel::new(vec![0.2; 4]);
        let model = SimModel::new(base.skills.iter().zip(&v).map(|(b, d)| b + d).collect());
        let models: Vec<&SimModel> = std::iter::repeat(&model).take(copies).collect();
        let weights = vec![1.0 / copies as f64; copies];
        let merged = ties_merge(&base, &models, &MergeSpec::new(weights, 1.0)).unwrap();
        for (got, want) in merged.skills.iter().zip(&model.skills) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sft_is_monotone_in_examples_on_covered_skills(
        start in 0.0f64..0.5,
        target in 0.5f64..1.0,
        n1 in 1u64..100_000,
        n2 in 1u64..100_000,
    ) {
        prop_assume!(n1 < n2);
        let constants = SimConstants::default();
        let model = SimModel::new(vec![start]);
        let run = |n: u64| {
            let data = SimDataset::new(vec![target], vec![1], n);
            sim_sft(&model, &data, 1e-6, &constants).unwrap().skills[0]
        };
        let (small, large) = (run(n1), run(n2));
        // Larger corpora move the covered skill at least as close to target.
        prop_assert!((target - large).abs() <= (target - small).abs() + 1e-12);
    }

    #[test]
    fn object_parser_round_trips_its_own_echo(
        indices in prop::collection::vec(0usize..50, 1..6),
    ) {
        let sizes: Vec<usize> = indices.iter().map(|i| i + 1).collect();
        let echo = format!(
            "[[{}]]",
            indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        );
        prop_assert_eq!(parse_object_selection(&echo, &sizes).unwrap(), indices);
    }
}
