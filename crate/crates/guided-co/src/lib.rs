//! Learned guidance for probabilistic combinatorial-optimization heuristics.
//!
//! This crate pairs classic approximation algorithms — Karger–Stein for
//! minimum k-cut and random insertion for the TSP — with a graph neural
//! network that scores edges. The scores scale the graph's edge weights,
//! steering the algorithm toward better solutions while the algorithm itself
//! keeps every output feasible. Training is self-supervised: solutions
//! sampled from the algorithm are ranked by objective value and the ranking
//! drives a preference-based gradient estimator, so no precomputed optima
//! are needed. REINFORCE, I-MLE and supervised baselines are included for
//! comparison, along with instance generators, a training/evaluation harness
//! and a CLI (`guidedco`).

pub mod datagen;
pub mod estimators;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod kcut;
pub mod param;
pub mod rng;
pub mod tsp;

pub use graph::{ProblemGraph, ProblemInstance, ProblemKind, Solution};
pub use param::EdgeScores;
