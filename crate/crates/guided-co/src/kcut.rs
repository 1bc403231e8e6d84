//! Karger's contraction and the recursive Karger–Stein algorithm for
//! minimum k-cut, in unguided and score-guided variants.
//!
//! Contraction works on a [`MultiGraph`]: the list of live edges (original
//! edge indices whose endpoints lie in distinct meta-nodes) annotated with
//! the current meta-node labels. Parallel edges stay distinct entries so
//! the output indicator maps straight back to the canonical edge ordering;
//! self-loops are dropped on contraction.
//!
//! Guidance scales each edge's *sampling* weight to `w * (1 - sigmoid(s))`
//! while the *compare* weight stays the original `w` by default
//! ([`CompareMode::SampleModifiedCompareOriginal`]): sampling follows the
//! scores, but the two recursion arms are judged on real objective values.

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, ProblemGraph, Solution};
use crate::param::{effective_weights, EdgeScores, ParamError};
use crate::rng::{child_seed, rng_from_seed};

/// Base-case size of the Karger–Stein recursion.
const BASE_CASE_NODES: usize = 6;

#[derive(Debug, Error)]
pub enum KcutError {
    #[error("k = {k} must be at least 2")]
    KTooSmall { k: usize },
    #[error("k = {k} exceeds node count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("multigraph has no live edges but more than one meta-node")]
    Disconnected,
    #[error("recursion depth exceeded its bound of {0}; this is a bug")]
    RecursionDepth(usize),
    #[error(transparent)]
    Scores(#[from] ParamError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Which weights the recursion uses when comparing the cuts found by its
/// two arms. Sampling always uses the (possibly modified) sampling weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    /// Sample on modified weights, compare cuts on original weights.
    SampleModifiedCompareOriginal,
    /// Sample and compare on modified weights.
    SampleModifiedCompareModified,
}

/// Contraction state over a [`ProblemGraph`].
///
/// Each live entry carries the original edge index plus the current
/// meta-node labels of its endpoints, so a contraction is one pass over
/// the live list: entries spanning the two merged meta-nodes are dropped
/// (self-loops), the rest have the merged label rewritten in place.
#[derive(Debug, Clone)]
pub struct MultiGraph<'a> {
    graph: &'a ProblemGraph,
    sampling: &'a [f64],
    /// (original edge index, meta-node of u, meta-node of v).
    live: Vec<(u32, u32, u32)>,
    live_total: f64,
    meta_nodes: usize,
}

impl<'a> MultiGraph<'a> {
    /// Uncontracted multigraph; `sampling` holds one positive weight per
    /// original edge. Contracted edges inherit their original edge's entry.
    pub fn new(graph: &'a ProblemGraph, sampling: &'a [f64]) -> Self {
        assert_eq!(sampling.len(), graph.edge_count());
        Self {
            graph,
            sampling,
            live: graph
                .edges()
                .iter()
                .enumerate()
                .map(|(i, &(u, v))| (i as u32, u, v))
                .collect(),
            live_total: sampling.iter().sum(),
            meta_nodes: graph.node_count(),
        }
    }

    pub fn meta_nodes(&self) -> usize {
        self.meta_nodes
    }

    /// Original edge indices still spanning two meta-nodes. Because
    /// self-loops are dropped eagerly, this is exactly the cut induced by
    /// the current meta-nodes.
    pub fn live_edges(&self) -> Vec<u32> {
        self.live.iter().map(|&(e, _, _)| e).collect()
    }

    pub fn sampling_weight(&self, edge: usize) -> f64 {
        self.sampling[edge]
    }

    pub fn compare_weight(&self, edge: usize) -> f64 {
        self.graph.weights()[edge]
    }

    /// Merges the meta-nodes joined by the live entry at `position` and
    /// drops resulting self-loops.
    fn contract_position(&mut self, position: usize) {
        let (_, ra, rb) = self.live[position];
        debug_assert_ne!(ra, rb, "live edge endpoints must differ");
        self.meta_nodes -= 1;
        let mut live = std::mem::take(&mut self.live);
        let sampling = self.sampling;
        let mut removed = 0.0;
        live.retain_mut(|entry| {
            let joins_a = entry.1 == ra || entry.1 == rb;
            let joins_b = entry.2 == ra || entry.2 == rb;
            if joins_a && joins_b {
                removed += sampling[entry.0 as usize];
                false
            } else {
                // The merged meta-node keeps the label `ra`.
                if joins_a {
                    entry.1 = ra;
                } else if joins_b {
                    entry.2 = ra;
                }
                true
            }
        });
        self.live = live;
        self.live_total -= removed;
    }

    /// Total compare weight of the current cut (the live edges).
    fn compare_value(&self, mode: CompareMode) -> f64 {
        match mode {
            CompareMode::SampleModifiedCompareOriginal => self
                .live
                .iter()
                .map(|&(e, _, _)| self.graph.weights()[e as usize])
                .sum(),
            CompareMode::SampleModifiedCompareModified => self
                .live
                .iter()
                .map(|&(e, _, _)| self.sampling[e as usize])
                .sum(),
        }
    }

    fn cut_edges(&self) -> Vec<u32> {
        self.live.iter().map(|&(e, _, _)| e).collect()
    }
}

fn indicator_from_cut(edge_count: usize, cut: &[u32]) -> Vec<bool> {
    let mut selected = vec![false; edge_count];
    for &e in cut {
        selected[e as usize] = true;
    }
    selected
}

/// Samples a live edge with probability proportional to its sampling
/// weight. Returns the original edge index.
pub fn sample_contract_edge<R: Rng>(mg: &MultiGraph, rng: &mut R) -> Result<usize, KcutError> {
    sample_position(mg, rng).map(|p| mg.live[p].0 as usize)
}

/// Position of the sampled live entry.
fn sample_position<R: Rng>(mg: &MultiGraph, rng: &mut R) -> Result<usize, KcutError> {
    if mg.live.is_empty() {
        return Err(KcutError::Disconnected);
    }
    // The incrementally maintained total can drift from the true sum by
    // rounding; the final fallback keeps the draw valid either way.
    let x = rng.random::<f64>() * mg.live_total;
    let mut acc = 0.0;
    for (i, &(e, _, _)) in mg.live.iter().enumerate() {
        acc += mg.sampling[e as usize];
        if x < acc {
            return Ok(i);
        }
    }
    Ok(mg.live.len() - 1)
}

/// Contracts until exactly `target_t` meta-nodes remain. A target at or
/// above the current count is the identity.
pub fn contract<'a, R: Rng>(
    mut mg: MultiGraph<'a>,
    target_t: usize,
    rng: &mut R,
) -> Result<MultiGraph<'a>, KcutError> {
    while mg.meta_nodes > target_t {
        let position = sample_position(&mg, rng)?;
        mg.contract_position(position);
    }
    Ok(mg)
}

/// Recursion target `ceil(n / sqrt(2) + 1)`.
pub fn recursion_target(n: usize) -> usize {
    (n as f64 / std::f64::consts::SQRT_2 + 1.0).ceil() as usize
}

fn check_k(k: usize, n: usize) -> Result<(), KcutError> {
    if k < 2 {
        return Err(KcutError::KTooSmall { k });
    }
    if k > n {
        return Err(KcutError::KTooLarge { k, n });
    }
    Ok(())
}

/// Single non-recursive contraction pass from `|V|` down to `k` meta-nodes.
pub fn karger_single<R: Rng>(
    graph: &ProblemGraph,
    k: usize,
    scores: Option<&EdgeScores>,
    rng: &mut R,
) -> Result<Solution, KcutError> {
    if let Some(s) = scores {
        s.check_len(graph.edge_count())?;
    }
    let sampling = effective_weights(graph, scores);
    check_k(k, graph.node_count())?;
    let mg = contract(MultiGraph::new(graph, &sampling), k, rng)?;
    let selected = indicator_from_cut(graph.edge_count(), &mg.cut_edges());
    Ok(Solution::new(graph, selected)?)
}

/// Recursive Karger–Stein. Contracts to `t = ceil(n / sqrt(2) + 1)` twice
/// independently, recurses on both, and keeps the cut with the smaller
/// compare-weight objective; graphs at or below 6 meta-nodes contract
/// straight down to `k`. The returned objective is always on the original
/// weights.
pub fn karger_stein<R: Rng>(
    graph: &ProblemGraph,
    k: usize,
    scores: Option<&EdgeScores>,
    mode: CompareMode,
    rng: &mut R,
) -> Result<Solution, KcutError> {
    if let Some(s) = scores {
        s.check_len(graph.edge_count())?;
    }
    let sampling = effective_weights(graph, scores);
    karger_stein_weighted(graph, k, &sampling, mode, rng)
}

/// Karger–Stein on explicit sampling weights (one per original edge).
pub(crate) fn karger_stein_weighted<R: Rng>(
    graph: &ProblemGraph,
    k: usize,
    sampling: &[f64],
    mode: CompareMode,
    rng: &mut R,
) -> Result<Solution, KcutError> {
    let n = graph.node_count();
    check_k(k, n)?;
    if k == n {
        // Every node isolated: the cut is all edges, no sampling involved.
        return Ok(Solution::new(graph, vec![true; graph.edge_count()])?);
    }
    // The two arms of each recursion level draw from seeds derived as
    // child_seed(level_seed, arm), so a parallel schedule reproduces the
    // sequential one exactly.
    let root_seed = rng.random::<u64>();
    let max_depth = (2.0 * (n as f64).log2() * 2.0).ceil() as usize + 2;
    let mg = MultiGraph::new(graph, sampling);
    let (cut, _) = ks_recurse(mg, k, mode, root_seed, 0, max_depth)?;
    let selected = indicator_from_cut(graph.edge_count(), &cut);
    Ok(Solution::new(graph, selected)?)
}

/// Returns the winning cut as live-edge indices plus its compare value;
/// the indicator is materialized once at the root.
fn ks_recurse(
    mg: MultiGraph<'_>,
    k: usize,
    mode: CompareMode,
    seed: u64,
    depth: usize,
    max_depth: usize,
) -> Result<(Vec<u32>, f64), KcutError> {
    if depth > max_depth {
        return Err(KcutError::RecursionDepth(max_depth));
    }
    let n = mg.meta_nodes();
    if n <= k {
        let cmp = mg.compare_value(mode);
        return Ok((mg.cut_edges(), cmp));
    }
    if n <= BASE_CASE_NODES {
        let mut rng = rng_from_seed(child_seed(seed, 0));
        let mg = contract(mg, k, &mut rng)?;
        let cmp = mg.compare_value(mode);
        return Ok((mg.cut_edges(), cmp));
    }
    // For k near n the textbook target can undershoot k; clamping keeps the
    // contraction feasible and still strictly decreases n (t <= n - 1).
    let t = recursion_target(n).max(k);

    let mut rng_a = rng_from_seed(child_seed(seed, 0));
    let arm_a = contract(mg.clone(), t, &mut rng_a)?;
    let (sel_a, cmp_a) = ks_recurse(arm_a, k, mode, child_seed(seed, 1), depth + 1, max_depth)?;

    let mut rng_b = rng_from_seed(child_seed(seed, 2));
    let arm_b = contract(mg, t, &mut rng_b)?;
    let (sel_b, cmp_b) = ks_recurse(arm_b, k, mode, child_seed(seed, 3), depth + 1, max_depth)?;

    if cmp_a <= cmp_b {
        Ok((sel_a, cmp_a))
    } else {
        Ok((sel_b, cmp_b))
    }
}
