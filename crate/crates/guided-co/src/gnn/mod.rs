//! Residual gated graph convnet with exact reverse-mode gradients.
//!
//! The network embeds node and edge features with single affine layers,
//! runs `L` residual gated convolution layers and reads out one real score
//! per undirected edge through a small MLP head. Each undirected edge is
//! materialized as two directed entries whose features evolve separately;
//! the head outputs of the two directions are averaged into the edge score.
//!
//! Per layer, with `N_i` the neighbors of node `i` and elementwise gate
//! `eta_ij = sigmoid(e_ij) / sum_{j'} sigmoid(e_ij' + epsilon)`:
//!
//! ```text
//! x_i'  = x_i  + ReLU(BN(W1 x_i + sum_j eta_ij ⊙ W2 x_j))
//! e_ij' = e_ij + ReLU(BN(W3 e_ij + W4 x_i + W5 x_j))
//! ```
//!
//! Forward and backward passes are hand-written ([`forward_batch`] /
//! [`backward`]); a finite-difference suite pins their agreement. Batch
//! normalization runs either on the current batch's statistics
//! ([`NormMode::BatchStats`], training) or on stored running statistics
//! ([`NormMode::FixedStats`], evaluation and gradient checks).

mod net;

pub use net::{backward, forward, forward_batch, BatchStats, ForwardTrace, Gradients};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ProblemInstance, ProblemKind};

/// Batch-normalization epsilon inside the variance square root.
pub(crate) const BN_EPS: f64 = 1e-5;
/// Momentum of the running-statistics update.
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// How batch normalization obtains its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Use the statistics of the current forward batch and update the
    /// stored running averages afterwards (training).
    BatchStats,
    /// Freeze the stored running statistics (evaluation, gradient checks).
    FixedStats,
}

/// Architecture of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Convolution layers L.
    pub layers: usize,
    /// Hidden width d.
    pub hidden: usize,
    /// Layers of the scalar head MLP.
    pub head_layers: usize,
    /// Gate epsilon added inside the denominator sigmoid.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Input node feature dimension.
    #[serde(default = "default_feat_dim")]
    pub node_feat_dim: usize,
    /// Input edge feature dimension.
    #[serde(default = "default_feat_dim")]
    pub edge_feat_dim: usize,
    /// Default normalization mode during training.
    #[serde(default = "default_norm_mode")]
    pub norm_mode: NormMode,
}

fn default_epsilon() -> f64 {
    1e-20
}
fn default_feat_dim() -> usize {
    2
}
fn default_norm_mode() -> NormMode {
    NormMode::BatchStats
}

impl GnnConfig {
    /// Minimum k-cut default: 4 layers, 32 channels, 2 head layers.
    pub fn kcut_default() -> Self {
        Self {
            layers: 4,
            hidden: 32,
            head_layers: 2,
            epsilon: default_epsilon(),
            node_feat_dim: 2,
            edge_feat_dim: 2,
            norm_mode: NormMode::BatchStats,
        }
    }

    /// TSP default: 12 layers, 100 channels, 3 head layers.
    pub fn tsp_default() -> Self {
        Self {
            layers: 12,
            hidden: 100,
            head_layers: 3,
            epsilon: default_epsilon(),
            node_feat_dim: 2,
            edge_feat_dim: 2,
            norm_mode: NormMode::BatchStats,
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers < 1 {
            return Err(GnnError::BadConfig("layers must be >= 1".into()));
        }
        if self.hidden < 1 {
            return Err(GnnError::BadConfig("hidden width must be >= 1".into()));
        }
        if self.head_layers < 1 {
            return Err(GnnError::BadConfig("head needs at least one layer".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(GnnError::BadConfig("epsilon must be positive".into()));
        }
        if self.node_feat_dim < 1 || self.edge_feat_dim < 1 {
            return Err(GnnError::BadConfig("feature dims must be >= 1".into()));
        }
        Ok(())
    }

    /// Output dimension of head layer `t`.
    pub(crate) fn head_out_dim(&self, t: usize) -> usize {
        if t + 1 == self.head_layers {
            1
        } else {
            self.hidden
        }
    }

    /// Closed-form trainable parameter count:
    /// `d(fn+1) + d(fe+1) + L(5d^2 + 4d) + (hl-1)(d^2 + d) + (d + 1)`.
    pub fn trainable_param_count(&self) -> usize {
        let d = self.hidden;
        let embed = d * (self.node_feat_dim + 1) + d * (self.edge_feat_dim + 1);
        let conv = self.layers * (5 * d * d + 4 * d);
        let head = (self.head_layers - 1) * (d * d + d) + (d + 1);
        embed + conv + head
    }
}

/// Affine map, row-major `weight[out][in]` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(out_dim, in_dim);
        fill_glorot(&mut l.weight, in_dim, out_dim, rng);
        l
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
    }
}

/// Dot product with four independent accumulators. The reassociation is
/// fixed by this source, so results are deterministic (and the dependency
/// chain is short enough for SIMD).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[4 * i..4 * i + 4], &b[4 * i..4 * i + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn fill_glorot<R: Rng>(weights: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weights {
        *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
    }
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// One residual gated convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub w4: Vec<f64>,
    pub w5: Vec<f64>,
    pub bn_node: BatchNorm,
    pub bn_edge: BatchNorm,
}

/// All weights of the network. The canonical tensor order (embeddings,
/// conv layers, head) is what the optimizer state and the checkpoint format
/// index into.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: GnnConfig,
    pub embed_node: Linear,
    pub embed_edge: Linear,
    pub layers: Vec<ConvLayer>,
    pub head: Vec<Linear>,
}

/// Glorot-uniform matrices, zero biases, identity normalization.
/// Deterministic under the seed: tensors are filled in canonical order.
pub fn init_params<R: Rng>(config: &GnnConfig, rng: &mut R) -> Result<ModelParams, GnnError> {
    config.validate()?;
    let d = config.hidden;
    let embed_node = Linear::init(d, config.node_feat_dim, rng);
    let embed_edge = Linear::init(d, config.edge_feat_dim, rng);
    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let mut mats = [(); 5].map(|_| vec![0.0; d * d]);
        for m in &mut mats {
            fill_glorot(m, d, d, rng);
        }
        let [w1, w2, w3, w4, w5] = mats;
        layers.push(ConvLayer {
            w1,
            w2,
            w3,
            w4,
            w5,
            bn_node: BatchNorm::identity(d),
            bn_edge: BatchNorm::identity(d),
        });
    }
    let mut head = Vec::with_capacity(config.head_layers);
    for t in 0..config.head_layers {
        head.push(Linear::init(config.head_out_dim(t), d, rng));
    }
    Ok(ModelParams {
        config: config.clone(),
        embed_node,
        embed_edge,
        layers,
        head,
    })
}

impl ModelParams {
    pub fn trainable_param_count(&self) -> usize {
        self.trainable_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable tensors in canonical order.
    pub fn trainable_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.embed_node.weight,
            &self.embed_node.bias,
            &self.embed_edge.weight,
            &self.embed_edge.bias,
        ];
        for l in &self.layers {
            out.extend([
                l.w1.as_slice(),
                l.w2.as_slice(),
                l.w3.as_slice(),
                l.w4.as_slice(),
                l.w5.as_slice(),
                l.bn_node.scale.as_slice(),
                l.bn_node.shift.as_slice(),
                l.bn_edge.scale.as_slice(),
                l.bn_edge.shift.as_slice(),
            ]);
        }
        for h in &self.head {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.embed_node.weight,
            &mut self.embed_node.bias,
            &mut self.embed_edge.weight,
            &mut self.embed_edge.bias,
        ];
        for l in &mut self.layers {
            out.push(&mut l.w1);
            out.push(&mut l.w2);
            out.push(&mut l.w3);
            out.push(&mut l.w4);
            out.push(&mut l.w5);
            out.push(&mut l.bn_node.scale);
            out.push(&mut l.bn_node.shift);
            out.push(&mut l.bn_edge.scale);
            out.push(&mut l.bn_edge.shift);
        }
        for h in &mut self.head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Tensor names aligned with [`Self::trainable_slices`].
    fn trainable_names(config: &GnnConfig) -> Vec<String> {
        let mut names = vec![
            "embed_node.weight".to_string(),
            "embed_node.bias".to_string(),
            "embed_edge.weight".to_string(),
            "embed_edge.bias".to_string(),
        ];
        for i in 0..config.layers {
            for t in ["w1", "w2", "w3", "w4", "w5"] {
                names.push(format!("layer{i}.{t}"));
            }
            for t in ["bn_node.scale", "bn_node.shift", "bn_edge.scale", "bn_edge.shift"] {
                names.push(format!("layer{i}.{t}"));
            }
        }
        for t in 0..config.head_layers {
            names.push(format!("head{t}.weight"));
            names.push(format!("head{t}.bias"));
        }
        names
    }

    /// All tensors (trainable plus running statistics) as named row-major
    /// arrays; the checkpoint payload.
    pub fn named_arrays(&self) -> BTreeMap<String, Vec<f64>> {
        let mut map = BTreeMap::new();
        for (name, slice) in Self::trainable_names(&self.config)
            .into_iter()
            .zip(self.trainable_slices())
        {
            map.insert(name, slice.to_vec());
        }
        for (i, l) in self.layers.iter().enumerate() {
            map.insert(format!("layer{i}.bn_node.running_mean"), l.bn_node.running_mean.clone());
            map.insert(format!("layer{i}.bn_node.running_var"), l.bn_node.running_var.clone());
            map.insert(format!("layer{i}.bn_edge.running_mean"), l.bn_edge.running_mean.clone());
            map.insert(format!("layer{i}.bn_edge.running_var"), l.bn_edge.running_var.clone());
        }
        map
    }

    pub fn from_named_arrays(
        config: &GnnConfig,
        map: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, GnnError> {
        config.validate()?;
        let mut params = init_params(config, &mut crate::rng::rng_from_seed(0))?;
        let take = |name: &str, len: usize| -> Result<Vec<f64>, GnnError> {
            let arr = map
                .get(name)
                .ok_or_else(|| GnnError::Checkpoint(format!("missing tensor {name}")))?;
            if arr.len() != len {
                return Err(GnnError::Checkpoint(format!(
                    "tensor {name} has length {}, expected {len}",
                    arr.len()
                )));
            }
            Ok(arr.clone())
        };
        {
            let names = Self::trainable_names(config);
            let slices = params.trainable_slices_mut();
            for (name, slice) in names.iter().zip(slices) {
                let arr = take(name, slice.len())?;
                slice.copy_from_slice(&arr);
            }
        }
        for (i, l) in params.layers.iter_mut().enumerate() {
            l.bn_node.running_mean = take(&format!("layer{i}.bn_node.running_mean"), config.hidden)?;
            l.bn_node.running_var = take(&format!("layer{i}.bn_node.running_var"), config.hidden)?;
            l.bn_edge.running_mean = take(&format!("layer{i}.bn_edge.running_mean"), config.hidden)?;
            l.bn_edge.running_var = take(&format!("layer{i}.bn_edge.running_var"), config.hidden)?;
        }
        Ok(params)
    }

    /// Folds a training batch's statistics into the running averages.
    pub fn absorb_batch_stats(&mut self, stats: &BatchStats) {
        for (layer, (node, edge)) in self
            .layers
            .iter_mut()
            .zip(stats.node.iter().zip(&stats.edge))
        {
            update_running(&mut layer.bn_node, node);
            update_running(&mut layer.bn_edge, edge);
        }
    }
}

fn update_running(bn: &mut BatchNorm, stats: &(Vec<f64>, Vec<f64>)) {
    for (r, &b) in bn.running_mean.iter_mut().zip(&stats.0) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
    for (r, &b) in bn.running_var.iter_mut().zip(&stats.1) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

/// AdamW moment buffers over the flattened canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let len = params.trainable_param_count();
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One AdamW update (decoupled weight decay on every trainable tensor).
pub fn sgd_step_adamw(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), GnnError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let mut offset = 0usize;
    let grad_slices = grads.trainable_slices();
    let param_slices = params.trainable_slices_mut();
    if grad_slices.len() != param_slices.len() {
        return Err(GnnError::ShapeMismatch(
            "gradient tensors do not match parameter tensors".into(),
        ));
    }
    for (p_slice, g_slice) in param_slices.into_iter().zip(grad_slices) {
        if p_slice.len() != g_slice.len() {
            return Err(GnnError::ShapeMismatch(
                "gradient tensor length mismatch".into(),
            ));
        }
        for (p, &g) in p_slice.iter_mut().zip(g_slice) {
            let m = &mut state.m[offset];
            let v = &mut state.v[offset];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *p);
            offset += 1;
        }
    }
    Ok(())
}

/// Input features for one graph: row-major `[n x node_feat_dim]` and
/// `[|E| x edge_feat_dim]` (per undirected edge).
#[derive(Debug, Clone)]
pub struct Features {
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
    pub node_dim: usize,
    pub edge_dim: usize,
}

/// Minimal informative input features per problem kind.
///
/// k-cut: node `(degree / |V|, 1)`, edge `(w / mean_w, 1)`.
/// TSP:   node `(x, y)` coordinates, edge `(w, 1)`.
pub fn instance_features(instance: &ProblemInstance) -> Features {
    let graph = instance.graph();
    let n = graph.node_count();
    match instance.kind() {
        ProblemKind::MinKCut { .. } => {
            let degrees = graph.degrees();
            let node = degrees
                .iter()
                .flat_map(|&d| [d as f64 / n as f64, 1.0])
                .collect();
            let mean_w: f64 =
                graph.weights().iter().sum::<f64>() / graph.edge_count() as f64;
            let edge = graph
                .weights()
                .iter()
                .flat_map(|&w| [w / mean_w, 1.0])
                .collect();
            Features {
                node,
                edge,
                node_dim: 2,
                edge_dim: 2,
            }
        }
        ProblemKind::Tsp => {
            let coords = graph
                .coords()
                .expect("TSP instances are built from coordinates");
            let node = coords.iter().flat_map(|&(x, y)| [x, y]).collect();
            let edge = graph.weights().iter().flat_map(|&w| [w, 1.0]).collect();
            Features {
                node,
                edge,
                node_dim: 2,
                edge_dim: 2,
            }
        }
    }
}
