//! Graph substrate shared by every algorithm in the crate.
//!
//! A [`ProblemGraph`] is a connected, weighted, undirected graph with a
//! canonical edge ordering: edges are stored strictly sorted by `(u, v)`
//! with `u < v`. Every indicator vector, score vector and gradient in the
//! crate indexes edges in this order. Solutions are indicator vectors over
//! that ordering plus a cached objective value, which is always the sum of
//! the *original* edge weights of the selected edges.
//!
//! Brute-force solvers for both problems live here as well; they are the
//! ground-truth oracles used by the test suites and by exact labeling of
//! small instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node-count cap for [`brute_force_min_kcut`].
pub const BRUTE_FORCE_KCUT_MAX_NODES: usize = 12;
/// Node-count cap for [`brute_force_tsp`].
pub const BRUTE_FORCE_TSP_MAX_NODES: usize = 11;

const COORD_WEIGHT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge ({0}, {1}) is out of range for {2} nodes")]
    NodeOutOfRange(u32, u32, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("edge {0} has non-positive or non-finite weight {1}")]
    BadWeight(usize, f64),
    #[error("graph is not connected")]
    Disconnected,
    #[error("coords given for {0} nodes but graph has {1}")]
    CoordCountMismatch(usize, usize),
    #[error("coords require a complete graph")]
    CoordsNotComplete,
    #[error("edge {0} weight {1} does not match coordinate distance {2}")]
    CoordWeightMismatch(usize, f64, f64),
    #[error("indicator length {got} does not match edge count {expected}")]
    IndicatorLength { expected: usize, got: usize },
    #[error("brute force refuses {n} nodes (limit {limit})")]
    TooLargeForBruteForce { n: usize, limit: usize },
    #[error("k = {k} out of range for {n} nodes")]
    KOutOfRange { k: usize, n: usize },
    #[error("TSP instance requires a complete graph")]
    NotComplete,
    #[error("ground truth fails the feasibility check for its problem kind")]
    InvalidGroundTruth,
    #[error("unknown problem kind {0:?}")]
    UnknownKind(String),
    #[error("kcut instance is missing k")]
    MissingK,
    #[error("malformed instance line: {0}")]
    Json(#[from] serde_json::Error),
}

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    components: usize,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            components: n,
        }
    }

    pub fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Returns true if the two elements were in different sets.
    pub fn union(&mut self, x: u32, y: u32) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        self.components -= 1;
        match self.rank[rx as usize].cmp(&self.rank[ry as usize]) {
            std::cmp::Ordering::Less => self.parent[rx as usize] = ry,
            std::cmp::Ordering::Greater => self.parent[ry as usize] = rx,
            std::cmp::Ordering::Equal => {
                self.parent[ry as usize] = rx;
                self.rank[rx as usize] += 1;
            }
        }
        true
    }

    pub fn components(&self) -> usize {
        self.components
    }
}

/// Connected, weighted, undirected graph with a canonical edge ordering.
///
/// Immutable after construction. The edge list is strictly sorted
/// lexicographically by `(u, v)` with `u < v`; this fixed ordering is what
/// ties indicator vectors, edge scores and gradients together.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemGraph {
    node_count: usize,
    edges: Vec<(u32, u32)>,
    weights: Vec<f64>,
    coords: Option<Vec<(f64, f64)>>,
}

impl ProblemGraph {
    /// Builds a graph from `(u, v, w)` triples. Endpoint order within a
    /// triple does not matter; edges are normalized and sorted into the
    /// canonical ordering.
    pub fn new(
        node_count: usize,
        edge_list: Vec<(u32, u32, f64)>,
        coords: Option<Vec<(f64, f64)>>,
    ) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        let mut triples = edge_list;
        for t in &mut triples {
            if t.0 == t.1 {
                return Err(GraphError::SelfLoop(t.0));
            }
            if t.0 as usize >= node_count || t.1 as usize >= node_count {
                return Err(GraphError::NodeOutOfRange(t.0, t.1, node_count));
            }
            if t.0 > t.1 {
                std::mem::swap(&mut t.0, &mut t.1);
            }
        }
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut edges = Vec::with_capacity(triples.len());
        let mut weights = Vec::with_capacity(triples.len());
        for (i, &(u, v, w)) in triples.iter().enumerate() {
            if i > 0 && (u, v) == (triples[i - 1].0, triples[i - 1].1) {
                return Err(GraphError::DuplicateEdge(u, v));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(GraphError::BadWeight(i, w));
            }
            edges.push((u, v));
            weights.push(w);
        }

        let mut dsu = DisjointSet::new(node_count);
        for &(u, v) in &edges {
            dsu.union(u, v);
        }
        if dsu.components() != 1 {
            return Err(GraphError::Disconnected);
        }

        let graph = Self {
            node_count,
            edges,
            weights,
            coords: None,
        };
        if let Some(coords) = coords {
            graph.with_coords(coords)
        } else {
            Ok(graph)
        }
    }

    fn with_coords(mut self, coords: Vec<(f64, f64)>) -> Result<Self, GraphError> {
        if coords.len() != self.node_count {
            return Err(GraphError::CoordCountMismatch(coords.len(), self.node_count));
        }
        if !self.is_complete() {
            return Err(GraphError::CoordsNotComplete);
        }
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            let d = euclidean(coords[u as usize], coords[v as usize]);
            let w = self.weights[i];
            if (w - d).abs() > COORD_WEIGHT_REL_TOL * d.max(1.0) {
                return Err(GraphError::CoordWeightMismatch(i, w, d));
            }
        }
        self.coords = Some(coords);
        Ok(self)
    }

    /// Complete Euclidean graph over the given points.
    pub fn complete_from_coords(coords: Vec<(f64, f64)>) -> Result<Self, GraphError> {
        let n = coords.len();
        let mut triples = Vec::with_capacity(n * (n - 1) / 2);
        for u in 0..n {
            for v in (u + 1)..n {
                triples.push((u as u32, v as u32, euclidean(coords[u], coords[v])));
            }
        }
        Self::new(n, triples, Some(coords))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    /// Canonical index of edge `{u, v}`, if present.
    pub fn edge_index(&self, u: u32, v: u32) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edges.binary_search(&key).ok()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.node_count * (self.node_count - 1) / 2
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.node_count];
        for &(u, v) in &self.edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        deg
    }

    /// Same topology, different weights. Coordinates are dropped because the
    /// new weights no longer agree with the point distances.
    pub(crate) fn reweighted(&self, weights: Vec<f64>) -> Result<Self, GraphError> {
        if weights.len() != self.edges.len() {
            return Err(GraphError::IndicatorLength {
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(GraphError::BadWeight(i, w));
            }
        }
        Ok(Self {
            node_count: self.node_count,
            edges: self.edges.clone(),
            weights,
            coords: None,
        })
    }
}

fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Total original weight of the selected edges.
pub fn objective_value(graph: &ProblemGraph, selected: &[bool]) -> Result<f64, GraphError> {
    if selected.len() != graph.edge_count() {
        return Err(GraphError::IndicatorLength {
            expected: graph.edge_count(),
            got: selected.len(),
        });
    }
    Ok(graph
        .weights
        .iter()
        .zip(selected)
        .filter(|(_, &s)| s)
        .map(|(w, _)| w)
        .sum())
}

/// Edge indicator plus cached objective value.
///
/// The objective is always computed from the original graph weights;
/// feasibility is problem-dependent and checked by [`validate_kcut`] /
/// [`validate_tour`], not by this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    selected: Vec<bool>,
    objective: f64,
}

impl Solution {
    pub fn new(graph: &ProblemGraph, selected: Vec<bool>) -> Result<Self, GraphError> {
        let objective = objective_value(graph, &selected)?;
        Ok(Self {
            selected,
            objective,
        })
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// True iff removing the selected edges leaves exactly `k` connected
/// components and every selected edge spans two of them (no superfluous
/// cut edges).
pub fn validate_kcut(graph: &ProblemGraph, selected: &[bool], k: usize) -> bool {
    if selected.len() != graph.edge_count() {
        return false;
    }
    let mut dsu = DisjointSet::new(graph.node_count());
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        if !selected[i] {
            dsu.union(u, v);
        }
    }
    if dsu.components() != k {
        return false;
    }
    graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| selected[*i])
        .all(|(_, &(u, v))| dsu.find(u) != dsu.find(v))
}

/// True iff the selected edges form a single Hamiltonian cycle.
pub fn validate_tour(graph: &ProblemGraph, selected: &[bool]) -> bool {
    if selected.len() != graph.edge_count() {
        return false;
    }
    let n = graph.node_count();
    let mut degree = vec![0usize; n];
    let mut count = 0usize;
    let mut dsu = DisjointSet::new(n);
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        if selected[i] {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
            dsu.union(u, v);
            count += 1;
        }
    }
    count == n && degree.iter().all(|&d| d == 2) && dsu.components() == 1
}

/// Exhaustive minimum k-cut over all partitions of the nodes into exactly
/// `k` non-empty connected parts. Deterministic: ties are broken by the
/// lexicographically smallest indicator.
pub fn brute_force_min_kcut(graph: &ProblemGraph, k: usize) -> Result<Solution, GraphError> {
    let n = graph.node_count();
    if n > BRUTE_FORCE_KCUT_MAX_NODES {
        return Err(GraphError::TooLargeForBruteForce {
            n,
            limit: BRUTE_FORCE_KCUT_MAX_NODES,
        });
    }
    if k < 2 || k > n {
        return Err(GraphError::KOutOfRange { k, n });
    }

    let mut assign = vec![0usize; n];
    let mut best: Option<(f64, Vec<bool>)> = None;
    enumerate_partitions(&mut assign, 1, 0, k, graph, &mut best);
    let (_, selected) = best.expect("a connected graph always has a k-partition");
    debug_assert!(validate_kcut(graph, &selected, k));
    // Normalize the cached objective to the canonical edge-order sum.
    Solution::new(graph, selected)
}

/// Restricted-growth-string enumeration of set partitions into exactly `k`
/// blocks. `assign[0]` is pinned to block 0.
fn enumerate_partitions(
    assign: &mut Vec<usize>,
    i: usize,
    max_block: usize,
    k: usize,
    graph: &ProblemGraph,
    best: &mut Option<(f64, Vec<bool>)>,
) {
    let n = assign.len();
    if i == n {
        if max_block + 1 == k {
            consider_partition(assign, k, graph, best);
        }
        return;
    }
    // Remaining nodes must still be able to open the missing blocks.
    let blocks_open = max_block + 1;
    let missing = k.saturating_sub(blocks_open);
    if missing > n - i {
        return;
    }
    let cap = (max_block + 1).min(k - 1);
    for b in 0..=cap {
        assign[i] = b;
        let new_max = max_block.max(b);
        enumerate_partitions(assign, i + 1, new_max, k, graph, best);
    }
}

fn consider_partition(
    assign: &[usize],
    k: usize,
    graph: &ProblemGraph,
    best: &mut Option<(f64, Vec<bool>)>,
) {
    // Each block must induce a connected subgraph: merging endpoints of
    // intra-block edges must leave exactly k components.
    let mut dsu = DisjointSet::new(assign.len());
    let mut cut_weight = 0.0;
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        if assign[u as usize] == assign[v as usize] {
            dsu.union(u, v);
        } else {
            cut_weight += graph.weights()[i];
        }
    }
    if dsu.components() != k {
        return;
    }
    let better = match best {
        None => true,
        Some((w, _)) => cut_weight < *w,
    };
    let tied = matches!(best, Some((w, _)) if cut_weight == *w);
    if better || tied {
        let selected: Vec<bool> = graph
            .edges()
            .iter()
            .map(|&(u, v)| assign[u as usize] != assign[v as usize])
            .collect();
        if better || selected < best.as_ref().unwrap().1 {
            *best = Some((cut_weight, selected));
        }
    }
}

/// Exhaustive TSP over all `(n-1)!/2` tours with node 0 fixed as the start.
/// Deterministic: ties are broken by the lexicographically smallest
/// indicator.
pub fn brute_force_tsp(graph: &ProblemGraph) -> Result<Solution, GraphError> {
    let n = graph.node_count();
    if n > BRUTE_FORCE_TSP_MAX_NODES {
        return Err(GraphError::TooLargeForBruteForce {
            n,
            limit: BRUTE_FORCE_TSP_MAX_NODES,
        });
    }
    if !graph.is_complete() {
        return Err(GraphError::NotComplete);
    }
    if n < 3 {
        return Err(GraphError::TooFewNodes(n));
    }

    let w = weight_matrix(graph);
    let mut path = Vec::with_capacity(n);
    path.push(0u32);
    let mut used = vec![false; n];
    used[0] = true;
    let mut best: Option<(f64, Vec<bool>)> = None;
    tsp_search(graph, &w, &mut path, &mut used, 0.0, &mut best);
    let (_, selected) = best.expect("complete graph always has a tour");
    debug_assert!(validate_tour(graph, &selected));
    // Normalize the cached objective to the canonical edge-order sum.
    Solution::new(graph, selected)
}

fn weight_matrix(graph: &ProblemGraph) -> Vec<f64> {
    let n = graph.node_count();
    let mut w = vec![0.0; n * n];
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        w[u as usize * n + v as usize] = graph.weights()[i];
        w[v as usize * n + u as usize] = graph.weights()[i];
    }
    w
}

fn tsp_search(
    graph: &ProblemGraph,
    w: &[f64],
    path: &mut Vec<u32>,
    used: &mut [bool],
    length: f64,
    best: &mut Option<(f64, Vec<bool>)>,
) {
    let n = used.len();
    // Positive weights: any extension strictly increases the length, so a
    // partial path at or above the incumbent can neither beat nor tie it.
    if let Some((b, _)) = best {
        if length >= *b {
            return;
        }
    }
    if path.len() == n {
        // Count each undirected tour once: first hop below last hop.
        if path[1] > path[n - 1] {
            return;
        }
        let total = length + w[path[n - 1] as usize * n];
        let better = match best {
            None => true,
            Some((b, _)) => total < *b,
        };
        let tied = matches!(best, Some((b, _)) if total == *b);
        if better || tied {
            let selected = tour_indicator_unchecked(graph, path);
            if better || selected < best.as_ref().unwrap().1 {
                *best = Some((total, selected));
            }
        }
        return;
    }
    let last = *path.last().unwrap() as usize;
    for next in 1..n {
        if !used[next] {
            used[next] = true;
            path.push(next as u32);
            tsp_search(graph, w, path, used, length + w[last * n + next], best);
            path.pop();
            used[next] = false;
        }
    }
}

/// Indicator for a node order assumed to be a valid permutation.
pub(crate) fn tour_indicator_unchecked(graph: &ProblemGraph, order: &[u32]) -> Vec<bool> {
    let mut selected = vec![false; graph.edge_count()];
    for i in 0..order.len() {
        let u = order[i];
        let v = order[(i + 1) % order.len()];
        let idx = graph
            .edge_index(u, v)
            .expect("tour edge must exist in the graph");
        selected[idx] = true;
    }
    selected
}

/// Which problem an instance poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    MinKCut { k: usize },
    Tsp,
}

impl ProblemKind {
    pub fn is_tsp(&self) -> bool {
        matches!(self, ProblemKind::Tsp)
    }
}

/// Reference solution attached to an instance. `exact` distinguishes proven
/// optima (brute force, construction) from best-known heuristic labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub solution: Solution,
    pub exact: bool,
}

/// A problem graph tagged with the problem it poses and an optional
/// reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    graph: ProblemGraph,
    kind: ProblemKind,
    ground_truth: Option<GroundTruth>,
}

impl ProblemInstance {
    pub fn new(
        graph: ProblemGraph,
        kind: ProblemKind,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self, GraphError> {
        match kind {
            ProblemKind::Tsp => {
                if !graph.is_complete() {
                    return Err(GraphError::NotComplete);
                }
            }
            ProblemKind::MinKCut { k } => {
                if k < 2 || k > graph.node_count() {
                    return Err(GraphError::KOutOfRange {
                        k,
                        n: graph.node_count(),
                    });
                }
            }
        }
        if let Some(gt) = &ground_truth {
            let ok = match kind {
                ProblemKind::MinKCut { k } => validate_kcut(&graph, gt.solution.selected(), k),
                ProblemKind::Tsp => validate_tour(&graph, gt.solution.selected()),
            };
            if !ok {
                return Err(GraphError::InvalidGroundTruth);
            }
        }
        Ok(Self {
            graph,
            kind,
            ground_truth,
        })
    }

    pub fn graph(&self) -> &ProblemGraph {
        &self.graph
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn set_ground_truth(&mut self, gt: Option<GroundTruth>) -> Result<(), GraphError> {
        if let Some(g) = &gt {
            let ok = match self.kind {
                ProblemKind::MinKCut { k } => validate_kcut(&self.graph, g.solution.selected(), k),
                ProblemKind::Tsp => validate_tour(&self.graph, g.solution.selected()),
            };
            if !ok {
                return Err(GraphError::InvalidGroundTruth);
            }
        }
        self.ground_truth = gt;
        Ok(())
    }

    /// Serializes to one JSON line of the dataset format.
    pub fn to_json_line(&self) -> String {
        let wire = InstanceWire {
            n: self.graph.node_count(),
            edges: self
                .graph
                .edges()
                .iter()
                .zip(self.graph.weights())
                .map(|(&(u, v), &w)| (u, v, w))
                .collect(),
            coords: self.graph.coords().map(|c| c.to_vec()),
            kind: match self.kind {
                ProblemKind::MinKCut { .. } => "kcut".to_string(),
                ProblemKind::Tsp => "tsp".to_string(),
            },
            k: match self.kind {
                ProblemKind::MinKCut { k } => Some(k),
                ProblemKind::Tsp => None,
            },
            label: self
                .ground_truth
                .as_ref()
                .map(|gt| gt.solution.selected().iter().map(|&b| u8::from(b)).collect()),
            label_exact: self.ground_truth.as_ref().map(|gt| gt.exact),
        };
        serde_json::to_string(&wire).expect("instance serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self, GraphError> {
        let wire: InstanceWire = serde_json::from_str(line)?;
        let graph = ProblemGraph::new(wire.n, wire.edges, wire.coords)?;
        let kind = match wire.kind.as_str() {
            "kcut" => ProblemKind::MinKCut {
                k: wire.k.ok_or(GraphError::MissingK)?,
            },
            "tsp" => ProblemKind::Tsp,
            other => return Err(GraphError::UnknownKind(other.to_string())),
        };
        let ground_truth = match wire.label {
            Some(bits) => {
                let selected: Vec<bool> = bits.iter().map(|&b| b != 0).collect();
                let solution = Solution::new(&graph, selected)?;
                Some(GroundTruth {
                    solution,
                    exact: wire.label_exact.unwrap_or(false),
                })
            }
            None => None,
        };
        Self::new(graph, kind, ground_truth)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceWire {
    n: usize,
    edges: Vec<(u32, u32, f64)>,
    coords: Option<Vec<(f64, f64)>>,
    kind: String,
    k: Option<usize>,
    label: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_exact: Option<bool>,
}
