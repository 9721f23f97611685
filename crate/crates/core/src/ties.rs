//! TIES merging over simulated skill vectors.
//!
//! Three phases per merge: trim each task vector to its largest-magnitude
//! coordinates, elect a per-coordinate sign by weighted majority, then
//! average the sign-agreeing values. Operates on the flat simulated vectors,
//! so trim granularity is global.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimModel;

/// Merge hyperparameters: one weight per input model and the density of
/// coordinates each task vector keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    pub weights: Vec<f64>,
    pub density: f64,
}

impl MergeSpec {
    pub fn new(weights: Vec<f64>, density: f64) -> Self {
        Self { weights, density }
    }

    /// The paper's fixed setting: weights (0.5, 0.5), density 0.5.
    pub fn pairwise_default() -> Self {
        Self::new(vec![0.5, 0.5], 0.5)
    }
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("ties merge needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("density must lie in [0, 1], got {0}")]
    DensityOutOfRange(f64),
    #[error("expected {expected} weights for {expected} models, got {got}")]
    WeightArity { expected: usize, got: usize },
    #[error("weights must be nonnegative with positive sum")]
    BadWeights,
    #[error("model dimension {got} does not match base dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Number of coordinates a task vector keeps at density `rho` over `dim`
/// coordinates: ceil(rho * dim), with near-integer products snapped first so
/// float noise cannot change the count.
pub fn trim_count(rho: f64, dim: usize) -> usize {
    let x = rho * dim as f64;
    let snapped = x.round();
    let count = if (x - snapped).abs() < 1e-9 { snapped } else { x.ceil() };
    count as usize
}

/// Signum with exact zero preserved.
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Merge `models` into `base` following trim / elect / merge.
///
/// Trim keeps the `trim_count` largest-magnitude coordinates of each task
/// vector (magnitude ties broken toward the lower coordinate index). Elect
/// takes the sign of the weighted coordinate sum. Merge averages the values
/// whose sign matches the elected one, weighted, and adds the result to the
/// base. Inputs are never mutated.
pub fn ties_merge(
    base: &SimModel,
    models: &[&SimModel],
    spec: &MergeSpec,
) -> Result<SimModel, MergeError> {
    if models.len() < 2 {
        return Err(MergeError::TooFewModels(models.len()));
    }
    if !(0.0..=1.0).contains(&spec.density) {
        return Err(MergeError::DensityOutOfRange(spec.density));
    }
    if spec.weights.len() != models.len() {
        return Err(MergeError::WeightArity {
            expected: models.len(),
            got: spec.weights.len(),
        });
    }
    if spec.weights.iter().any(|w| *w < 0.0) || spec.weights.iter().sum::<f64>() <= 0.0 {
        return Err(MergeError::BadWeights);
    }
    let dim = base.dim();
    for m in models {
        if m.dim() != dim {
            return Err(MergeError::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
    }

    let keep = trim_count(spec.density, dim);
    let trimmed: Vec<Vec<f64>> = models
        .iter()
        .map(|m| {
            let tau: Vec<f64> = m
                .skills
                .iter()
                .zip(&base.skills)
                .map(|(s, b)| s - b)
                .collect();
            trim(&tau, keep)
        })
        .collect();

    let mut merged = base.skills.clone();
    for k in 0..dim {
        let weighted_sum: f64 = trimmed
            .iter()
            .zip(&spec.weights)
            .map(|(tau, w)| w * tau[k])
            .sum();
        let elected = sign(weighted_sum);
        if elected == 0 {
            continue;
        }
        let mut value_sum = 0.0;
        let mut weight_sum = 0.0;
        for (tau, w) in trimmed.iter().zip(&spec.weights) {
            if sign(tau[k]) == elected {
                value_sum += w * tau[k];
                weight_sum += w;
            }
        }
        if weight_sum > 0.0 {
            merged[k] += value_sum / weight_sum;
        }
    }
    Ok(SimModel::new(merged))
}

/// Zero all but the `keep` largest-magnitude coordinates, breaking magnitude
/// ties toward the lower index.
fn trim(tau: &[f64], keep: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by(|&a, &b| {
        tau[b]
            .abs()
            .partial_cmp(&tau[a].abs())
            .expect("skill values are finite")
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; tau.len()];
    for &idx in order.iter().take(keep) {
        out[idx] = tau[idx];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f64]) -> SimModel {
        SimModel::new(v.to_vec())
    }

    #[test]
    fn worked_four_dimensional_example() {
        let base = m(&[0.0, 0.0, 0.0, 0.0]);
        let m1 = m(&[0.4, -0.2, 0.1, 0.0]);
        let m2 = m(&[0.3, 0.5, -0.1, 0.2]);
        let out = ties_merge(&base, &[&m1, &m2], &MergeSpec::pairwise_default()).unwrap();
        let expected = [0.35, 0.5, 0.0, 0.0];
        for (got, want) in out.skills.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_density_returns_base() {
        let base = m(&[0.1, -0.2, 0.3]);
        let m1 = m(&[0.5, 0.5, 0.5]);
        let m2 = m(&[-0.5, 0.5, 0.0]);
        let out = ties_merge(&base, &[&m1, &m2], &MergeSpec::new(vec![0.5, 0.5], 0.0)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn self_merge_at_full_density_returns_the_model() {
        let base = m(&[0.1, 0.0, -0.3]);
        let model = m(&[0.4, -0.2, 0.0]);
        let out = ties_merge(&base, &[&model, &model], &MergeSpec::new(vec![0.5, 0.5], 1.0)).unwrap();
        for (got, want) in out.skills.iter().zip(&model.skills) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let base = m(&[0.0, 0.0]);
        let a = m(&[0.1, 0.2]);
        let b = m(&[0.3, 0.4]);
        let short = m(&[0.1]);
        assert!(matches!(
            ties_merge(&base, &[&a], &MergeSpec::pairwise_default()),
            Err(MergeError::TooFewModels(1))
        ));
        assert!(matches!(
            ties_merge(&base, &[&a, &b], &MergeSpec::new(vec![0.5, 0.5], 1.5)),
            Err(MergeError::DensityOutOfRange(_))
        ));
        assert!(matches!(
            ties_merge(&base, &[&a, &b], &MergeSpec::new(vec![0.5], 0.5)),
            Err(MergeError::WeightArity { .. })
        ));
        assert!(matches!(
            ties_merge(&base, &[&a, &b], &MergeSpec::new(vec![0.0, 0.0], 0.5)),
            Err(MergeError::BadWeights)
        ));
        assert!(matches!(
            ties_merge(&base, &[&a, &short], &MergeSpec::pairwise_default()),
            Err(MergeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trim_ties_break_toward_lower_index() {
        assert_eq!(trim(&[0.5, -0.5, 0.5], 2), vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn trim_count_snaps_float_noise() {
        assert_eq!(trim_count(0.5, 4), 2);
        assert_eq!(trim_count(0.1, 30), 3); // 0.1 * 30 = 3.0000000000000004 in f64
        assert_eq!(trim_count(0.3, 10), 3);
        assert_eq!(trim_count(0.0, 7), 0);
        assert_eq!(trim_count(1.0, 7), 7);
        assert_eq!(trim_count(0.26, 10), 3); // genuine ceil
    }
}
