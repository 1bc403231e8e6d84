//! Turning edge scores into guided algorithm runs.
//!
//! A score vector `s` parameterizes an approximation algorithm indirectly:
//! the graph's edge weights are multiplied by `1 - sigmoid(s)` and the
//! algorithm runs on the modified graph. High scores shrink an edge's
//! weight, which makes weight-averse heuristics more likely to include it
//! in the solution. [`guided_sample`] is the uniform entry point over both
//! problems; with no scores it falls back to the unguided algorithm.

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, ProblemGraph, ProblemInstance, ProblemKind, Solution};
use crate::kcut::{self, CompareMode, KcutError};
use crate::tsp::{self, TspError};

/// Lower bound on modified weights, preserving the `w > 0` invariant that
/// both the sampling normalizer and the theory rely on.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("score length {got} does not match edge count {expected}")]
    ScoreLength { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Errors from dispatching a guided sample to the underlying algorithm.
#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Kcut(#[from] KcutError),
    #[error(transparent)]
    Tsp(#[from] TspError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Numerically stable sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `w * (1 - sigmoid(s))`, floored at [`WEIGHT_FLOOR`].
pub fn modified_weight(weight: f64, score: f64) -> f64 {
    (weight * (1.0 - sigmoid(score))).max(WEIGHT_FLOOR)
}

/// Per-edge real scores in the canonical edge ordering. Entries are
/// checked finite at the boundary; NaN and infinities never enter the
/// algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScores {
    values: Vec<f64>,
}

impl EdgeScores {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ParamError::NonFiniteScore(i));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<(), ParamError> {
        if self.values.len() != expected {
            return Err(ParamError::ScoreLength {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Effective sampling weights for a graph under optional guidance.
pub(crate) fn effective_weights(graph: &ProblemGraph, scores: Option<&EdgeScores>) -> Vec<f64> {
    match scores {
        Some(s) => graph
            .weights()
            .iter()
            .zip(s.values())
            .map(|(&w, &sc)| modified_weight(w, sc))
            .collect(),
        None => graph.weights().to_vec(),
    }
}

/// New graph with identical topology and weights scaled by `1 - sigmoid(s)`.
pub fn scale_weights(graph: &ProblemGraph, scores: &EdgeScores) -> Result<ProblemGraph, ParamError> {
    scores.check_len(graph.edge_count())?;
    let weights = graph
        .weights()
        .iter()
        .zip(scores.values())
        .map(|(&w, &s)| modified_weight(w, s))
        .collect();
    Ok(graph.reweighted(weights)?)
}

/// Samples one solution from the approximation algorithm for the instance's
/// problem kind: Karger–Stein for minimum k-cut (dual-weight default mode),
/// random insertion for the TSP. With `scores` absent the run is unguided.
/// The returned objective is always on the original weights.
pub fn guided_sample<R: Rng>(
    instance: &ProblemInstance,
    scores: Option<&EdgeScores>,
    rng: &mut R,
) -> Result<Solution, SampleError> {
    if let Some(s) = scores {
        s.check_len(instance.graph().edge_count())
            .map_err(SampleError::Param)?;
    }
    match instance.kind() {
        ProblemKind::MinKCut { k } => Ok(kcut::karger_stein(
            instance.graph(),
            k,
            scores,
            CompareMode::SampleModifiedCompareOriginal,
            rng,
        )?),
        ProblemKind::Tsp => Ok(tsp::random_insertion(instance.graph(), scores, rng)?),
    }
}

/// Runs the instance's algorithm with explicit per-edge weight multipliers
/// (the `1 - sigmoid(s)` channel, possibly perturbed by estimator noise).
/// Multipliers may be arbitrary reals; the product is floored at
/// [`WEIGHT_FLOOR`].
pub(crate) fn sample_with_multipliers<R: Rng>(
    instance: &ProblemInstance,
    multipliers: &[f64],
    rng: &mut R,
) -> Result<Solution, SampleError> {
    let graph = instance.graph();
    assert_eq!(multipliers.len(), graph.edge_count());
    let effective: Vec<f64> = graph
        .weights()
        .iter()
        .zip(multipliers)
        .map(|(&w, &m)| (w * m).max(WEIGHT_FLOOR))
        .collect();
    match instance.kind() {
        ProblemKind::MinKCut { k } => Ok(kcut::karger_stein_weighted(
            graph,
            k,
            &effective,
            CompareMode::SampleModifiedCompareOriginal,
            rng,
        )?),
        ProblemKind::Tsp => Ok(tsp::random_insertion_weighted(graph, &effective, rng)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn triangle() -> ProblemGraph {
        ProblemGraph::new(3, vec![(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)], None).unwrap()
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-745.0) > 0.0);
        assert!(sigmoid(745.0) < 1.0 + 1e-15);
    }

    #[test]
    fn scores_reject_non_finite() {
        assert!(EdgeScores::new(vec![0.0, f64::NAN]).is_err());
        assert!(EdgeScores::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(EdgeScores::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn scale_weights_examples() {
        // Canonical edge order of the triangle: (0,1) w=1, (0,2) w=3, (1,2) w=2.
        let g = triangle();
        let half = scale_weights(&g, &EdgeScores::new(vec![0.0; 3]).unwrap()).unwrap();
        assert_eq!(half.weights(), &[0.5, 1.5, 1.0]);

        // A huge score drives the weight to the floor.
        let floored = scale_weights(&g, &EdgeScores::new(vec![80.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(floored.weights()[0], WEIGHT_FLOOR);

        // sigma(-ln 3) = 1/4, so a weight of 2 becomes 1.5.
        let idx = g.edge_index(1, 2).unwrap();
        let mut values = vec![0.0; 3];
        values[idx] = -(3f64.ln());
        let scaled = scale_weights(&g, &EdgeScores::new(values).unwrap()).unwrap();
        assert!((scaled.weights()[idx] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn scale_weights_preserves_topology_and_ratio() {
        let g = triangle();
        let s = EdgeScores::new(vec![1.25, -0.5, 3.0]).unwrap();
        let scaled = scale_weights(&g, &s).unwrap();
        assert_eq!(scaled.edges(), g.edges());
        for i in 0..3 {
            let ratio = scaled.weights()[i] / g.weights()[i];
            assert!((ratio - (1.0 - sigmoid(s.values()[i]))).abs() < 1e-15);
        }
    }

    #[test]
    fn increasing_a_score_decreases_the_weight() {
        let g = triangle();
        let mut prev = f64::INFINITY;
        for s in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            let scaled = scale_weights(&g, &EdgeScores::new(vec![s, 0.0, 0.0]).unwrap()).unwrap();
            assert!(scaled.weights()[0] < prev);
            prev = scaled.weights()[0];
        }
    }

    #[test]
    fn scale_weights_checks_length() {
        let g = triangle();
        let s = EdgeScores::new(vec![0.0]).unwrap();
        assert!(matches!(
            scale_weights(&g, &s),
            Err(ParamError::ScoreLength { .. })
        ));
    }

    #[test]
    fn guided_sample_is_deterministic_under_seed() {
        let g = triangle();
        let inst = ProblemInstance::new(g, ProblemKind::MinKCut { k: 2 }, None).unwrap();
        let a = guided_sample(&inst, None, &mut rng_from_seed(3)).unwrap();
        let b = guided_sample(&inst, None, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }
}
