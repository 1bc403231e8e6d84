//! Problem-instance generators and ground-truth labeling.
//!
//! Four minimum-k-cut families and one Euclidean TSP family:
//!
//! * `unweighted-cliques` — k cliques joined by few random edges; with the
//!   inter-edge count at least two below the smallest clique size, the
//!   inter edges are provably the minimum cut, so labels are exact by
//!   construction.
//! * `unweighted-degree-controlled` — k node groups of varying density;
//!   intra-group edges are added until every node's degree exceeds the
//!   inter-group edge count. Labeled heuristically.
//! * `noigen` — random connected graph (Hamilton path first) with uniform
//!   weights; inter-subgraph weights are scaled down by a fixed factor.
//! * `noigen-plus` — like `noigen`, but the fraction of inter-subgraph
//!   edges is controlled explicitly, allowing milder weight scaling so the
//!   cut cannot be read off the weights alone.
//! * `euclidean-tsp` — points uniform in the unit square, complete graph
//!   of pairwise distances.
//!
//! Heuristic k-cut labels take the best of repeated unguided Karger–Stein
//! runs; TSP labels are exact (brute force) up to 11 nodes and best-of-many
//! insertion + 2-opt beyond that, flagged accordingly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    brute_force_min_kcut, brute_force_tsp, GraphError, GroundTruth, ProblemGraph,
    ProblemInstance, ProblemKind, Solution, BRUTE_FORCE_TSP_MAX_NODES,
};
use crate::kcut::{karger_stein, CompareMode, KcutError};
use crate::rng::{child_seed, rng_from_seed};
use crate::tsp::{farthest_insertion, random_insertion, two_opt, TspError};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator spec: {0}")]
    BadSpec(String),
    #[error("spec is infeasible: {0}")]
    Infeasible(String),
    #[error("dataset line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kcut(#[from] KcutError),
    #[error(transparent)]
    Tsp(#[from] TspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    UnweightedCliques,
    UnweightedDegreeControlled,
    NoiGen,
    NoiGenPlus,
    EuclideanTsp,
}

/// Declarative description of an instance family. `nodes_min..=nodes_max`
/// bounds the total size (for the clique families it bounds the per-group
/// size via division by `k`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub nodes_min: usize,
    pub nodes_max: usize,
    /// Desired number of connected components of the cut.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Number of planted subgraphs; defaults to `k`. The NOIgen families
    /// may plant a different number than `k`.
    #[serde(default)]
    pub subgraphs: Option<usize>,
    /// Edge density: `|E| = round(density * n(n-1)/2)` for the NOIgen
    /// families.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Fraction of edges between subgraphs (`noigen-plus` only).
    #[serde(default = "default_inter_fraction")]
    pub inter_fraction: f64,
    /// Multiplier on inter-subgraph weights; defaults to 0.1 for `noigen`
    /// and 0.5 for `noigen-plus`.
    #[serde(default)]
    pub weight_scale_factor: Option<f64>,
    /// Karger–Stein repetitions for heuristic labels.
    #[serde(default = "default_label_runs")]
    pub label_runs: usize,
    pub seed: u64,
}

fn default_k() -> usize {
    2
}
fn default_density() -> f64 {
    0.3
}
fn default_inter_fraction() -> f64 {
    0.05
}
fn default_label_runs() -> usize {
    100
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.nodes_min < 2 || self.nodes_min > self.nodes_max {
            return Err(DatagenError::BadSpec(
                "need 2 <= nodes_min <= nodes_max".into(),
            ));
        }
        if !matches!(self.kind, GeneratorKind::EuclideanTsp) && self.k < 2 {
            return Err(DatagenError::BadSpec("k must be at least 2".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(DatagenError::BadSpec("density must be in (0, 1]".into()));
        }
        if !(self.inter_fraction > 0.0 && self.inter_fraction < 1.0) {
            return Err(DatagenError::BadSpec(
                "inter_fraction must be in (0, 1)".into(),
            ));
        }
        if let Some(s) = self.weight_scale_factor {
            if !(s > 0.0 && s <= 1.0) {
                return Err(DatagenError::BadSpec(
                    "weight_scale_factor must be in (0, 1]".into(),
                ));
            }
        }
        if self.label_runs < 1 {
            return Err(DatagenError::BadSpec("label_runs must be >= 1".into()));
        }
        if matches!(self.kind, GeneratorKind::EuclideanTsp) && self.nodes_min < 3 {
            return Err(DatagenError::BadSpec("TSP needs at least 3 nodes".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.weight_scale_factor.unwrap_or(match self.kind {
            GeneratorKind::NoiGen => 0.1,
            GeneratorKind::NoiGenPlus => 0.5,
            _ => 1.0,
        })
    }

    pub fn label_method(&self) -> &'static str {
        match self.kind {
            GeneratorKind::UnweightedCliques => "construction",
            GeneratorKind::EuclideanTsp => "none",
            _ => "karger-best-of-runs",
        }
    }
}

/// Generates `count` instances; instance `i` draws from the child stream
/// `child_seed(spec.seed, i)`, so datasets are reproducible and can be
/// generated in parallel.
pub fn generate_dataset(
    spec: &GeneratorSpec,
    count: usize,
) -> Result<Vec<ProblemInstance>, DatagenError> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = rng_from_seed(child_seed(spec.seed, i as u64));
            generate_one(spec, &mut rng)
        })
        .collect()
}

pub fn generate_one<R: Rng>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<ProblemInstance, DatagenError> {
    match spec.kind {
        GeneratorKind::UnweightedCliques => gen_unweighted_cliques(spec, rng),
        GeneratorKind::UnweightedDegreeControlled => {
            gen_unweighted_degree_controlled(spec, rng).map(|(inst, _)| inst)
        }
        GeneratorKind::NoiGen => gen_noigen(spec, rng).map(|(inst, _)| inst),
        GeneratorKind::NoiGenPlus => gen_noigen_plus(spec, rng).map(|(inst, _)| inst),
        GeneratorKind::EuclideanTsp => {
            let n = rng.random_range(spec.nodes_min..=spec.nodes_max);
            gen_euclidean_tsp(n, rng).map_err(Into::into)
        }
    }
}

/// Group sizes for the clique-based families: one size per group, uniform
/// in the per-group range derived from the node bounds (at least 3).
fn group_sizes<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Vec<usize> {
    let lo = (spec.nodes_min / spec.k).max(3);
    let hi = (spec.nodes_max / spec.k).max(lo);
    (0..spec.k).map(|_| rng.random_range(lo..=hi)).collect()
}

fn group_of(sizes: &[usize]) -> (Vec<usize>, usize) {
    let n: usize = sizes.iter().sum();
    let mut group = vec![0usize; n];
    let mut idx = 0;
    for (g, &s) in sizes.iter().enumerate() {
        for _ in 0..s {
            group[idx] = g;
            idx += 1;
        }
    }
    (group, n)
}

/// Random inter-group edge count and endpoints: a spanning structure over
/// the groups first, then extra distinct cross pairs.
fn cross_edges<R: Rng>(
    group: &[usize],
    group_count: usize,
    total: usize,
    rng: &mut R,
) -> Vec<(u32, u32)> {
    let n = group.len();
    let members: Vec<Vec<u32>> = (0..group_count)
        .map(|g| {
            (0..n)
                .filter(|&i| group[i] == g)
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    let mut chosen: std::collections::BTreeSet<(u32, u32)> = std::collections::BTreeSet::new();
    // Spanning structure over groups keeps the quotient graph connected.
    for g in 1..group_count {
        let other = rng.random_range(0..g);
        let a = members[g][rng.random_range(0..members[g].len())];
        let b = members[other][rng.random_range(0..members[other].len())];
        chosen.insert((a.min(b), a.max(b)));
    }
    while chosen.len() < total {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if group[a] != group[b] {
            let (a, b) = (a as u32, b as u32);
            chosen.insert((a.min(b), a.max(b)));
        }
    }
    chosen.into_iter().collect()
}

/// k cliques plus few inter-clique edges; the inter edges are the exact
/// minimum k-cut whenever their count is at least two below the smallest
/// clique, which the sampling range enforces.
pub fn gen_unweighted_cliques<R: Rng>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<ProblemInstance, DatagenError> {
    let sizes = group_sizes(spec, rng);
    let min_size = *sizes.iter().min().unwrap();
    if min_size < spec.k + 1 || min_size.saturating_sub(2) < spec.k - 1 {
        return Err(DatagenError::Infeasible(format!(
            "smallest clique ({min_size}) cannot host k-1..=size-2 inter edges for k = {}",
            spec.k
        )));
    }
    let (group, n) = group_of(&sizes);
    let inter_count = rng.random_range(spec.k - 1..=min_size - 2);
    let inter = cross_edges(&group, spec.k, inter_count, rng);

    let mut triples = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if group[u as usize] == group[v as usize] {
                triples.push((u, v, 1.0));
            }
        }
    }
    for &(u, v) in &inter {
        triples.push((u, v, 1.0));
    }
    let graph = ProblemGraph::new(n, triples, None)?;
    let selected: Vec<bool> = graph
        .edges()
        .iter()
        .map(|&(u, v)| group[u as usize] != group[v as usize])
        .collect();
    let solution = Solution::new(&graph, selected)?;
    let gt = GroundTruth {
        solution,
        exact: true,
    };
    Ok(ProblemInstance::new(
        graph,
        ProblemKind::MinKCut { k: spec.k },
        Some(gt),
    )?)
}

/// k groups with intra edges added until every node's degree strictly
/// exceeds the inter-group edge count. Labeled heuristically (the planted
/// cut is only very likely optimal). Returns the inter-edge count for
/// structural tests.
pub(crate) fn gen_unweighted_degree_controlled<R: Rng>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<(ProblemInstance, usize), DatagenError> {
    let sizes = group_sizes(spec, rng);
    let min_size = *sizes.iter().min().unwrap();
    if min_size < spec.k + 1 || min_size.saturating_sub(2) < spec.k - 1 {
        return Err(DatagenError::Infeasible(format!(
            "smallest group ({min_size}) too small for k = {}",
            spec.k
        )));
    }
    let (group, n) = group_of(&sizes);
    let inter_count = rng.random_range(spec.k - 1..=min_size - 2);
    let inter = cross_edges(&group, spec.k, inter_count, rng);

    let mut edges: std::collections::BTreeSet<(u32, u32)> = inter.iter().copied().collect();
    let mut degree = vec![0usize; n];
    for &(u, v) in &inter {
        degree[u as usize] += 1;
        degree[v as usize] += 1;
    }
    // Random spanning tree per group for connectivity, then top up degrees.
    let members: Vec<Vec<u32>> = (0..spec.k)
        .map(|g| {
            (0..n)
                .filter(|&i| group[i] == g)
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    for m in &members {
        let mut order = m.clone();
        order.shuffle(rng);
        for w in order.windows(2) {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            if edges.insert((a, b)) {
                degree[a as usize] += 1;
                degree[b as usize] += 1;
            }
        }
    }
    for m in &members {
        loop {
            let lacking: Vec<u32> = m
                .iter()
                .copied()
                .filter(|&v| degree[v as usize] <= inter_count)
                .collect();
            if lacking.is_empty() {
                break;
            }
            let a = lacking[rng.random_range(0..lacking.len())];
            let candidates: Vec<u32> = m
                .iter()
                .copied()
                .filter(|&b| b != a && !edges.contains(&(a.min(b), a.max(b))))
                .collect();
            if candidates.is_empty() {
                return Err(DatagenError::Infeasible(
                    "group saturated before reaching the degree condition".into(),
                ));
            }
            let b = candidates[rng.random_range(0..candidates.len())];
            edges.insert((a.min(b), a.max(b)));
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
    }

    let triples = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
    let graph = ProblemGraph::new(n, triples, None)?;
    let label = label_kcut(&graph, spec.k, spec.label_runs, rng)?;
    let inst = ProblemInstance::new(
        graph,
        ProblemKind::MinKCut { k: spec.k },
        Some(GroundTruth {
            solution: label,
            exact: false,
        }),
    )?;
    Ok((inst, inter_count))
}

/// Splits `n` into `parts` sizes of at least `min_part` each.
fn random_composition<R: Rng>(
    n: usize,
    parts: usize,
    min_part: usize,
    rng: &mut R,
) -> Result<Vec<usize>, DatagenError> {
    if parts * min_part > n {
        return Err(DatagenError::Infeasible(format!(
            "cannot split {n} nodes into {parts} groups of >= {min_part}"
        )));
    }
    let mut sizes = vec![min_part; parts];
    for _ in 0..n - parts * min_part {
        sizes[rng.random_range(0..parts)] += 1;
    }
    Ok(sizes)
}

/// Shuffled group assignment from a composition.
fn random_groups<R: Rng>(
    n: usize,
    parts: usize,
    min_part: usize,
    rng: &mut R,
) -> Result<Vec<usize>, DatagenError> {
    let sizes = random_composition(n, parts, min_part, rng)?;
    let mut group = Vec::with_capacity(n);
    for (g, &s) in sizes.iter().enumerate() {
        group.extend(std::iter::repeat(g).take(s));
    }
    group.shuffle(rng);
    Ok(group)
}

/// Uniform weight in (0, 1].
fn uniform_weight<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// NOIgen: Hamilton path for connectivity, random edges up to the target
/// density, uniform weights, inter-subgraph weights scaled down.
pub(crate) fn gen_noigen<R: Rng>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<(ProblemInstance, Vec<usize>), DatagenError> {
    let n = rng.random_range(spec.nodes_min..=spec.nodes_max);
    let max_edges = n * (n - 1) / 2;
    let target = ((spec.density * max_edges as f64).round() as usize).min(max_edges);
    if target < n - 1 {
        return Err(DatagenError::Infeasible(format!(
            "density {} gives {target} edges, below the {} needed for a Hamilton path",
            spec.density,
            n - 1
        )));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    let mut edges: std::collections::BTreeSet<(u32, u32)> = order
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect();
    while edges.len() < target {
        let a = rng.random_range(0..n) as u32;
        let b = rng.random_range(0..n) as u32;
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let groups = random_groups(n, spec.subgraphs.unwrap_or(spec.k), 2, rng)?;
    let scale = spec.scale();
    let triples = edges
        .iter()
        .map(|&(u, v)| {
            let mut w = uniform_weight(rng);
            if groups[u as usize] != groups[v as usize] {
                w *= scale;
            }
            (u, v, w)
        })
        .collect();
    let graph = ProblemGraph::new(n, triples, None)?;
    let label = label_kcut(&graph, spec.k, spec.label_runs, rng)?;
    let inst = ProblemInstance::new(
        graph,
        ProblemKind::MinKCut { k: spec.k },
        Some(GroundTruth {
            solution: label,
            exact: false,
        }),
    )?;
    Ok((inst, groups))
}

/// NOIgen+: the number of inter-subgraph edges is pinned to
/// `round(inter_fraction * |E|)`, so the weight scaling can stay mild.
pub(crate) fn gen_noigen_plus<R: Rng>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<(ProblemInstance, Vec<usize>), DatagenError> {
    let n = rng.random_range(spec.nodes_min..=spec.nodes_max);
    let s = spec.subgraphs.unwrap_or(spec.k);
    let max_edges = n * (n - 1) / 2;
    let target = ((spec.density * max_edges as f64).round() as usize).min(max_edges);
    let inter_target = (spec.inter_fraction * target as f64).round() as usize;
    let intra_target = target - inter_target;

    // A balanced composition can lack intra capacity at high densities;
    // resample a bounded number of times before declaring the spec
    // infeasible.
    let mut groups = None;
    for _ in 0..50 {
        let candidate = random_groups(n, s, 2, rng)?;
        let sizes: Vec<usize> = (0..s)
            .map(|g| candidate.iter().filter(|&&x| x == g).count())
            .collect();
        let max_intra: usize = sizes.iter().map(|&z| z * (z - 1) / 2).sum();
        let max_inter = max_edges - max_intra;
        let inter_ok = inter_target >= s - 1 && inter_target <= max_inter;
        let intra_ok = intra_target >= n - s && intra_target <= max_intra;
        if inter_ok && intra_ok {
            groups = Some(candidate);
            break;
        }
    }
    let groups = groups.ok_or_else(|| {
        DatagenError::Infeasible(format!(
            "no group composition supports {intra_target} intra and {inter_target} inter edges \
             over {n} nodes in {s} groups"
        ))
    })?;

    // Intra: spanning tree per group, then random intra pairs.
    let members: Vec<Vec<u32>> = (0..s)
        .map(|g| {
            (0..n)
                .filter(|&i| groups[i] == g)
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    let mut intra: std::collections::BTreeSet<(u32, u32)> = std::collections::BTreeSet::new();
    for m in &members {
        let mut order = m.clone();
        order.shuffle(rng);
        for w in order.windows(2) {
            intra.insert((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    while intra.len() < intra_target {
        let g = rng.random_range(0..s);
        if members[g].len() < 2 {
            continue;
        }
        let a = members[g][rng.random_range(0..members[g].len())];
        let b = members[g][rng.random_range(0..members[g].len())];
        if a != b {
            intra.insert((a.min(b), a.max(b)));
        }
    }
    let inter = cross_edges(&groups, s, inter_target, rng);

    let scale = spec.scale();
    let mut triples: Vec<(u32, u32, f64)> = intra
        .iter()
        .map(|&(u, v)| (u, v, uniform_weight(rng)))
        .collect();
    triples.extend(inter.iter().map(|&(u, v)| (u, v, uniform_weight(rng) * scale)));
    let graph = ProblemGraph::new(n, triples, None)?;
    let label = label_kcut(&graph, spec.k, spec.label_runs, rng)?;
    let inst = ProblemInstance::new(
        graph,
        ProblemKind::MinKCut { k: spec.k },
        Some(GroundTruth {
            solution: label,
            exact: false,
        }),
    )?;
    Ok((inst, groups))
}

/// Complete Euclidean graph over points uniform in the unit square;
/// coinciding points are resampled so all distances stay positive.
pub fn gen_euclidean_tsp<R: Rng>(n: usize, rng: &mut R) -> Result<ProblemInstance, GraphError> {
    let mut coords: Vec<(f64, f64)> = Vec::with_capacity(n);
    while coords.len() < n {
        let p = (rng.random::<f64>(), rng.random::<f64>());
        if coords.iter().any(|&q| q == p) {
            continue;
        }
        coords.push(p);
    }
    let graph = ProblemGraph::complete_from_coords(coords)?;
    ProblemInstance::new(graph, ProblemKind::Tsp, None)
}

/// Best of `runs` unguided Karger–Stein cuts; run `i` draws from the child
/// stream `child_seed(root, i)`, so a longer budget extends a shorter one.
pub fn label_kcut<R: Rng>(
    graph: &ProblemGraph,
    k: usize,
    runs: usize,
    rng: &mut R,
) -> Result<Solution, KcutError> {
    let root = rng.random::<u64>();
    let mut best: Option<Solution> = None;
    for i in 0..runs {
        let mut run_rng = rng_from_seed(child_seed(root, i as u64));
        let sol = karger_stein(
            graph,
            k,
            None,
            CompareMode::SampleModifiedCompareOriginal,
            &mut run_rng,
        )?;
        if best.as_ref().map_or(true, |b| sol.objective() < b.objective()) {
            best = Some(sol);
        }
    }
    Ok(best.expect("runs >= 1"))
}

/// TSP reference label: exact brute force up to 11 nodes, otherwise the
/// best of farthest insertion + 2-opt and 64 random insertions + 2-opt.
/// The flag reports whether the label is exact.
pub fn label_tsp<R: Rng>(
    graph: &ProblemGraph,
    rng: &mut R,
) -> Result<(Solution, bool), DatagenError> {
    if graph.node_count() <= BRUTE_FORCE_TSP_MAX_NODES {
        return Ok((brute_force_tsp(graph)?, true));
    }
    let root = rng.random::<u64>();
    let mut best = two_opt(graph, &farthest_insertion(graph)?)?;
    for i in 0..64u64 {
        let mut run_rng = rng_from_seed(child_seed(root, i));
        let tour = random_insertion(graph, None, &mut run_rng)?;
        let improved = two_opt(graph, &tour)?;
        if improved.objective() < best.objective() {
            best = improved;
        }
    }
    Ok((best, false))
}

/// How the `label` command computes reference solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMethod {
    /// Exact brute force (small instances only).
    BruteForce,
    /// Best of 100 unguided Karger–Stein runs (k-cut only).
    Karger100,
    /// Problem-appropriate heuristic labeling.
    Heuristic,
}

impl std::str::FromStr for LabelMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bruteforce" | "brute-force" => Ok(LabelMethod::BruteForce),
            "karger100" => Ok(LabelMethod::Karger100),
            "heuristic" => Ok(LabelMethod::Heuristic),
            other => Err(format!(
                "unknown label method {other:?} (expected bruteforce|karger100|heuristic)"
            )),
        }
    }
}

/// Relabels instances in place. Instance `i` uses the child stream
/// `child_seed(seed, i)`.
pub fn label_dataset(
    instances: &mut [ProblemInstance],
    method: LabelMethod,
    seed: u64,
) -> Result<(), DatagenError> {
    for (i, inst) in instances.iter_mut().enumerate() {
        let mut rng = rng_from_seed(child_seed(seed, i as u64));
        let gt = match (method, inst.kind()) {
            (LabelMethod::BruteForce, ProblemKind::MinKCut { k }) => GroundTruth {
                solution: brute_force_min_kcut(inst.graph(), k)?,
                exact: true,
            },
            (LabelMethod::BruteForce, ProblemKind::Tsp) => GroundTruth {
                solution: brute_force_tsp(inst.graph())?,
                exact: true,
            },
            (LabelMethod::Karger100, ProblemKind::MinKCut { k }) => GroundTruth {
                solution: label_kcut(inst.graph(), k, 100, &mut rng)?,
                exact: false,
            },
            (LabelMethod::Karger100, ProblemKind::Tsp) => {
                return Err(DatagenError::BadSpec(
                    "karger100 labels only apply to k-cut datasets".into(),
                ))
            }
            (LabelMethod::Heuristic, ProblemKind::MinKCut { k }) => GroundTruth {
                solution: label_kcut(inst.graph(), k, 100, &mut rng)?,
                exact: false,
            },
            (LabelMethod::Heuristic, ProblemKind::Tsp) => {
                let (solution, exact) = label_tsp(inst.graph(), &mut rng)?;
                GroundTruth { solution, exact }
            }
        };
        inst.set_ground_truth(Some(gt))?;
    }
    Ok(())
}

/// Sidecar manifest written next to each generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: GeneratorSpec,
    pub count: usize,
    pub seed: u64,
    pub label_method: String,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    dataset.with_file_name(name)
}

/// Writes instances as JSON-lines.
pub fn write_dataset(path: &Path, instances: &[ProblemInstance]) -> Result<(), DatagenError> {
    let mut out = BufWriter::new(File::create(path)?);
    for inst in instances {
        writeln!(out, "{}", inst.to_json_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DatagenError> {
    let mut out = BufWriter::new(File::create(manifest_path(path))?);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ProblemInstance>, DatagenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        instances.push(
            ProblemInstance::from_json_line(&line)
                .map_err(|source| DatagenError::Line { line: i + 1, source })?,
        );
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_kcut;

    fn clique_spec() -> GeneratorSpec {
        GeneratorSpec {
            kind: GeneratorKind::UnweightedCliques,
            nodes_min: 6,
            nodes_max: 8,
            k: 2,
            subgraphs: None,
            density: 0.3,
            inter_fraction: 0.05,
            weight_scale_factor: None,
            label_runs: 100,
            seed: 7,
        }
    }

    #[test]
    fn cliques_bridge_case_is_exact() {
        // Per-group size forced to 3: the single admissible inter-edge
        // count is 1, so the label is that bridge with objective 1.
        let spec = GeneratorSpec {
            nodes_min: 6,
            nodes_max: 6,
            ..clique_spec()
        };
        let inst = generate_one(&spec, &mut rng_from_seed(1)).unwrap();
        let gt = inst.ground_truth().unwrap();
        assert!(gt.exact);
        assert_eq!(gt.solution.objective(), 1.0);
        assert_eq!(gt.solution.selected_count(), 1);
    }

    #[test]
    fn clique_labels_match_brute_force() {
        let spec = clique_spec();
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let inst = generate_one(&spec, &mut rng).unwrap();
            assert!(inst.graph().node_count() <= 16);
            if inst.graph().node_count() <= 12 {
                let oracle = brute_force_min_kcut(inst.graph(), 2).unwrap();
                let gt = inst.ground_truth().unwrap();
                assert_eq!(gt.solution.objective(), oracle.objective());
                assert!(validate_kcut(inst.graph(), gt.solution.selected(), 2));
            }
        }
    }

    #[test]
    fn degree_controlled_structure_holds() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::UnweightedDegreeControlled,
            label_runs: 20,
            ..clique_spec()
        };
        for seed in 0..10 {
            let mut rng = rng_from_seed(100 + seed);
            let (inst, inter_count) = gen_unweighted_degree_controlled(&spec, &mut rng).unwrap();
            for &d in &inst.graph().degrees() {
                assert!(d > inter_count, "degree {d} <= inter edges {inter_count}");
            }
        }
    }

    #[test]
    fn noigen_degenerate_single_group_is_uniform() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::NoiGen,
            nodes_min: 12,
            nodes_max: 12,
            subgraphs: Some(1),
            weight_scale_factor: Some(1.0),
            density: 0.4,
            label_runs: 10,
            ..clique_spec()
        };
        let (inst, _) = gen_noigen(&spec, &mut rng_from_seed(3)).unwrap();
        let expected = (0.4f64 * (12.0 * 11.0 / 2.0)).round() as usize;
        assert_eq!(inst.graph().edge_count(), expected);
        assert!(inst.graph().weights().iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn noigen_plus_pins_the_inter_fraction() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::NoiGenPlus,
            nodes_min: 20,
            nodes_max: 24,
            k: 3,
            density: 0.25,
            inter_fraction: 0.08,
            label_runs: 10,
            ..clique_spec()
        };
        for seed in 0..10 {
            let (inst, groups) = gen_noigen_plus(&spec, &mut rng_from_seed(seed)).unwrap();
            let total = inst.graph().edge_count();
            let measured = inst
                .graph()
                .edges()
                .iter()
                .filter(|&&(u, v)| groups[u as usize] != groups[v as usize])
                .count();
            let target = (0.08 * total as f64).round() as usize;
            assert_eq!(measured, target, "seed {seed}");
        }
    }

    #[test]
    fn noigen_plus_labels_audit_against_brute_force() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::NoiGenPlus,
            nodes_min: 8,
            nodes_max: 10,
            k: 2,
            density: 0.4,
            inter_fraction: 0.1,
            label_runs: 100,
            ..clique_spec()
        };
        let mut matches = 0usize;
        let total = 100usize;
        for seed in 0..total as u64 {
            let (inst, _) = gen_noigen_plus(&spec, &mut rng_from_seed(seed)).unwrap();
            let gt = inst.ground_truth().unwrap();
            let oracle =
                brute_force_min_kcut(inst.graph(), 2).unwrap();
            if (gt.solution.objective() - oracle.objective()).abs() <= 1e-9 {
                matches += 1;
            }
        }
        assert!(matches >= 99, "labels matched brute force on {matches}/{total}");
    }

    #[test]
    fn euclidean_tsp_is_metric_and_small_instances_are_solvable() {
        let inst = gen_euclidean_tsp(8, &mut rng_from_seed(5)).unwrap();
        let g = inst.graph();
        let n = g.node_count();
        for a in 0..n as u32 {
            for b in (a + 1)..n as u32 {
                for c in 0..n as u32 {
                    if c == a || c == b {
                        continue;
                    }
                    let ab = g.weights()[g.edge_index(a, b).unwrap()];
                    let ac = g.weights()[g.edge_index(a, c).unwrap()];
                    let cb = g.weights()[g.edge_index(c, b).unwrap()];
                    assert!(ab <= ac + cb + 1e-12);
                }
            }
        }
        assert!(brute_force_tsp(g).is_ok());
    }

    #[test]
    fn label_kcut_single_run_and_monotone_budget() {
        let spec = clique_spec();
        let inst = generate_one(&spec, &mut rng_from_seed(2)).unwrap();
        let g = inst.graph();

        // runs = 1 equals one Karger–Stein call on the derived stream.
        let one = label_kcut(g, 2, 1, &mut rng_from_seed(9)).unwrap();
        let root = rng_from_seed(9).random::<u64>();
        let direct = karger_stein(
            g,
            2,
            None,
            CompareMode::SampleModifiedCompareOriginal,
            &mut rng_from_seed(child_seed(root, 0)),
        )
        .unwrap();
        assert_eq!(one, direct);

        // Nested budgets share their prefix: more runs never hurt.
        let b100 = label_kcut(g, 2, 100, &mut rng_from_seed(9)).unwrap();
        let b200 = label_kcut(g, 2, 200, &mut rng_from_seed(9)).unwrap();
        assert!(b200.objective() <= b100.objective());
    }

    #[test]
    fn label_tsp_dispatches_on_size() {
        let small = gen_euclidean_tsp(8, &mut rng_from_seed(11)).unwrap();
        let (sol, exact) = label_tsp(small.graph(), &mut rng_from_seed(1)).unwrap();
        assert!(exact);
        let oracle = brute_force_tsp(small.graph()).unwrap();
        assert_eq!(sol.objective(), oracle.objective());

        let large = gen_euclidean_tsp(20, &mut rng_from_seed(12)).unwrap();
        let (sol, exact) = label_tsp(large.graph(), &mut rng_from_seed(2)).unwrap();
        assert!(!exact);
        let fi = farthest_insertion(large.graph()).unwrap();
        assert!(sol.objective() <= fi.objective());
        let (again, _) = label_tsp(large.graph(), &mut rng_from_seed(2)).unwrap();
        assert_eq!(sol, again);
    }

    #[test]
    fn dataset_generation_is_reproducible() {
        let spec = clique_spec();
        let a = generate_dataset(&spec, 5).unwrap();
        let b = generate_dataset(&spec, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let spec = clique_spec();
        let instances = generate_dataset(&spec, 4).unwrap();
        write_dataset(&path, &instances).unwrap();
        write_manifest(
            &path,
            &DatasetManifest {
                spec: spec.clone(),
                count: 4,
                seed: spec.seed,
                label_method: spec.label_method().to_string(),
            },
        )
        .unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(instances, back);
        assert!(manifest_path(&path).exists());
    }
}
