//! Forward and reverse passes of the residual gated graph convnet.
//!
//! Graphs in a mini-batch are processed as one disjoint union, so
//! batch-normalization statistics in [`NormMode::BatchStats`] mode cover
//! all nodes/edges of the batch, and per-graph gradients are concatenated
//! in graph order before a single reverse pass — the reduction order is
//! fixed and schedule-independent.
//!
//! All dense linear algebra is batched into single-threaded `dgemm` calls;
//! gates, normalization and residuals stay elementwise.

use super::{Features, GnnConfig, GnnError, ModelParams, NormMode, BN_EPS};
use crate::graph::ProblemGraph;
use crate::param::{sigmoid, EdgeScores};

/// `C (m x n) = alpha * A (m x k) . B (k x n) + beta * C`, all row-major.
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C (m x n) = alpha * A (m x k) . B^T + beta * C` with `B` given as
/// `n x k` row-major (the natural layout of a `Linear` weight).
fn gemm_nt(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C (k x n) = alpha * A^T . B + beta * C` with `A` given as `m x k`
/// row-major and `B` as `m x n` (grad-times-input accumulations).
fn gemm_tn(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            alpha,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Broadcast-add a bias row over `rows` rows of width `n`.
fn add_bias(c: &mut [f64], bias: &[f64], n: usize) {
    for row in c.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of an `m x n` row-major matrix, accumulated into `out`.
fn add_column_sums(a: &[f64], n: usize, out: &mut [f64]) {
    for row in a.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Directed-entry topology of a batch (disjoint union of its graphs).
#[derive(Debug, Clone, Default)]
pub(crate) struct BatchTopology {
    pub n_nodes: usize,
    pub n_dir: usize,
    pub n_und: usize,
    /// Source / destination node of each directed entry.
    pub dir_src: Vec<u32>,
    pub dir_dst: Vec<u32>,
    /// Undirected (global) edge behind each directed entry.
    pub dir_und: Vec<u32>,
    /// Per-graph `(start, end)` ranges into the undirected edge indexing.
    pub graph_und_ranges: Vec<(usize, usize)>,
}

impl BatchTopology {
    fn build(graphs: &[&ProblemGraph]) -> Self {
        let n_nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
        let n_und: usize = graphs.iter().map(|g| g.edge_count()).sum();
        let n_dir = 2 * n_und;
        let mut dir_src = Vec::with_capacity(n_dir);
        let mut dir_dst = Vec::with_capacity(n_dir);
        let mut dir_und = Vec::with_capacity(n_dir);
        let mut graph_und_ranges = Vec::with_capacity(graphs.len());
        let mut node_offset = 0u32;
        let mut und_offset = 0usize;
        for g in graphs {
            graph_und_ranges.push((und_offset, und_offset + g.edge_count()));
            for (local, &(u, v)) in g.edges().iter().enumerate() {
                let (gu, gv) = (node_offset + u, node_offset + v);
                let und = (und_offset + local) as u32;
                dir_src.push(gu);
                dir_dst.push(gv);
                dir_und.push(und);
                dir_src.push(gv);
                dir_dst.push(gu);
                dir_und.push(und);
            }
            node_offset += g.node_count() as u32;
            und_offset += g.edge_count();
        }
        Self {
            n_nodes,
            n_dir,
            n_und,
            dir_src,
            dir_dst,
            dir_und,
            graph_und_ranges,
        }
    }

    /// Rows of `src` (width `d`) gathered by node index.
    fn gather_rows(&self, nodes: &[u32], src: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; nodes.len() * d];
        for (row, &node) in out.chunks_exact_mut(d).zip(nodes) {
            row.copy_from_slice(&src[node as usize * d..(node as usize + 1) * d]);
        }
        out
    }

    /// Scatter-add rows of `src` (one per directed entry) into per-node
    /// rows of `dst`.
    fn scatter_add_rows(&self, nodes: &[u32], src: &[f64], dst: &mut [f64], d: usize) {
        for (row, &node) in src.chunks_exact(d).zip(nodes) {
            let target = &mut dst[node as usize * d..(node as usize + 1) * d];
            for (t, v) in target.iter_mut().zip(row) {
                *t += v;
            }
        }
    }
}

/// Normalization statistics actually used by one BN site.
#[derive(Debug, Clone)]
struct BnSite {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Per-layer batch means and (biased) variances of a training forward;
/// folded into the running averages via
/// [`ModelParams::absorb_batch_stats`](super::ModelParams::absorb_batch_stats).
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub(crate) node: Vec<(Vec<f64>, Vec<f64>)>,
    pub(crate) edge: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Everything the reverse pass needs to reproduce the forward exactly.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) topo: BatchTopology,
    norm_mode: NormMode,
    node_feats: Vec<f64>,
    edge_feats: Vec<f64>,
    /// Node activations per layer boundary: L+1 arrays of `[n_nodes * d]`.
    x: Vec<Vec<f64>>,
    /// Directed edge activations per layer boundary: L+1 arrays.
    e: Vec<Vec<f64>>,
    /// Pre-normalization node/edge sums per layer.
    pre_x: Vec<Vec<f64>>,
    pre_e: Vec<Vec<f64>>,
    /// Gate denominators per layer: `[n_nodes * d]`.
    den: Vec<Vec<f64>>,
    bn_node: Vec<BnSite>,
    bn_edge: Vec<BnSite>,
    /// Head pre-activations per head layer.
    head_pre: Vec<Vec<f64>>,
    /// Batch statistics (BatchStats mode only).
    batch_stats: Option<BatchStats>,
}

impl ForwardTrace {
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.batch_stats.as_ref()
    }
}

/// Gradients of `<grad_scores, scores>` with respect to every trainable
/// tensor, in the same canonical order as the parameter tensors, plus
/// gradients with respect to the input edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed_node_weight: Vec<f64>,
    pub embed_node_bias: Vec<f64>,
    pub embed_edge_weight: Vec<f64>,
    pub embed_edge_bias: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub head: Vec<(Vec<f64>, Vec<f64>)>,
    /// `[n_und * edge_feat_dim]`, summed over both directed entries.
    pub input_edge_feats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub w4: Vec<f64>,
    pub w5: Vec<f64>,
    pub bn_node_scale: Vec<f64>,
    pub bn_node_shift: Vec<f64>,
    pub bn_edge_scale: Vec<f64>,
    pub bn_edge_shift: Vec<f64>,
}

impl Gradients {
    pub fn zeros(config: &GnnConfig) -> Self {
        let d = config.hidden;
        Self {
            embed_node_weight: vec![0.0; d * config.node_feat_dim],
            embed_node_bias: vec![0.0; d],
            embed_edge_weight: vec![0.0; d * config.edge_feat_dim],
            embed_edge_bias: vec![0.0; d],
            layers: (0..config.layers)
                .map(|_| LayerGrads {
                    w1: vec![0.0; d * d],
                    w2: vec![0.0; d * d],
                    w3: vec![0.0; d * d],
                    w4: vec![0.0; d * d],
                    w5: vec![0.0; d * d],
                    bn_node_scale: vec![0.0; d],
                    bn_node_shift: vec![0.0; d],
                    bn_edge_scale: vec![0.0; d],
                    bn_edge_shift: vec![0.0; d],
                })
                .collect(),
            head: (0..config.head_layers)
                .map(|t| {
                    let out = config.head_out_dim(t);
                    (vec![0.0; out * d], vec![0.0; out])
                })
                .collect(),
            input_edge_feats: Vec::new(),
        }
    }

    pub fn trainable_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.embed_node_weight,
            &self.embed_node_bias,
            &self.embed_edge_weight,
            &self.embed_edge_bias,
        ];
        for l in &self.layers {
            out.extend([
                l.w1.as_slice(),
                l.w2.as_slice(),
                l.w3.as_slice(),
                l.w4.as_slice(),
                l.w5.as_slice(),
                l.bn_node_scale.as_slice(),
                l.bn_node_shift.as_slice(),
                l.bn_edge_scale.as_slice(),
                l.bn_edge_shift.as_slice(),
            ]);
        }
        for (w, b) in &self.head {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Element-wise sum with another gradient set of identical shape.
    pub fn add_assign(&mut self, other: &Gradients) {
        fn add(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add(&mut self.embed_node_weight, &other.embed_node_weight);
        add(&mut self.embed_node_bias, &other.embed_node_bias);
        add(&mut self.embed_edge_weight, &other.embed_edge_weight);
        add(&mut self.embed_edge_bias, &other.embed_edge_bias);
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            add(&mut l.w1, &o.w1);
            add(&mut l.w2, &o.w2);
            add(&mut l.w3, &o.w3);
            add(&mut l.w4, &o.w4);
            add(&mut l.w5, &o.w5);
            add(&mut l.bn_node_scale, &o.bn_node_scale);
            add(&mut l.bn_node_shift, &o.bn_node_shift);
            add(&mut l.bn_edge_scale, &o.bn_edge_scale);
            add(&mut l.bn_edge_shift, &o.bn_edge_shift);
        }
        for ((w, b), (ow, ob)) in self.head.iter_mut().zip(&other.head) {
            add(w, ow);
            add(b, ob);
        }
    }
}


/// Forward over a single graph.
pub fn forward(
    params: &ModelParams,
    graph: &ProblemGraph,
    features: &Features,
    mode: NormMode,
) -> Result<(EdgeScores, ForwardTrace), GnnError> {
    let (mut scores, trace) = forward_batch(params, &[(graph, features)], mode)?;
    Ok((
        scores.pop().expect("one graph in, one score vector out"),
        trace,
    ))
}

/// Forward over a mini-batch treated as one disjoint union. Returns one
/// score vector per graph (canonical edge order) and the trace for the
/// reverse pass.
pub fn forward_batch(
    params: &ModelParams,
    items: &[(&ProblemGraph, &Features)],
    mode: NormMode,
) -> Result<(Vec<EdgeScores>, ForwardTrace), GnnError> {
    let config = &params.config;
    config.validate()?;
    let d = config.hidden;

    for (graph, feats) in items {
        if feats.node_dim != config.node_feat_dim || feats.edge_dim != config.edge_feat_dim {
            return Err(GnnError::ShapeMismatch(
                "feature dimensions do not match the configuration".into(),
            ));
        }
        if feats.node.len() != graph.node_count() * feats.node_dim
            || feats.edge.len() != graph.edge_count() * feats.edge_dim
        {
            return Err(GnnError::ShapeMismatch(
                "feature arrays do not match the graph".into(),
            ));
        }
    }

    let graphs: Vec<&ProblemGraph> = items.iter().map(|(g, _)| *g).collect();
    let topo = BatchTopology::build(&graphs);
    let (n, m_dir, m_und) = (topo.n_nodes, topo.n_dir, topo.n_und);
    let (fd_n, fd_e) = (config.node_feat_dim, config.edge_feat_dim);

    let mut node_feats = vec![0.0; n * fd_n];
    let mut edge_feats = vec![0.0; m_und * fd_e];
    {
        let mut node_off = 0;
        let mut und_off = 0;
        for (graph, feats) in items {
            node_feats[node_off * fd_n..(node_off + graph.node_count()) * fd_n]
                .copy_from_slice(&feats.node);
            edge_feats[und_off * fd_e..(und_off + graph.edge_count()) * fd_e]
                .copy_from_slice(&feats.edge);
            node_off += graph.node_count();
            und_off += graph.edge_count();
        }
    }

    // Input embeddings: affine maps over all nodes / directed entries.
    let mut x0 = vec![0.0; n * d];
    gemm_nt(n, fd_n, d, 1.0, &node_feats, &params.embed_node.weight, 0.0, &mut x0);
    add_bias(&mut x0, &params.embed_node.bias, d);

    let dir_feats = topo.gather_rows(&topo.dir_und, &edge_feats, fd_e);
    let mut e0 = vec![0.0; m_dir * d];
    gemm_nt(m_dir, fd_e, d, 1.0, &dir_feats, &params.embed_edge.weight, 0.0, &mut e0);
    add_bias(&mut e0, &params.embed_edge.bias, d);

    let mut x_chain = vec![x0];
    let mut e_chain = vec![e0];
    let mut pre_x_all = Vec::with_capacity(config.layers);
    let mut pre_e_all = Vec::with_capacity(config.layers);
    let mut den_all = Vec::with_capacity(config.layers);
    let mut bn_node_sites = Vec::with_capacity(config.layers);
    let mut bn_edge_sites = Vec::with_capacity(config.layers);
    let mut stats = BatchStats {
        node: Vec::new(),
        edge: Vec::new(),
    };

    for (l, layer) in params.layers.iter().enumerate() {
        let x_in = x_chain.last().unwrap();
        let e_in = e_chain.last().unwrap();

        // Gate denominators: den[i][c] = sum over entries (i -> j) of
        // sigmoid(e_ij[c] + epsilon).
        let mut den = vec![0.0; n * d];
        for p in 0..m_dir {
            let src = topo.dir_src[p] as usize;
            let row = &e_in[p * d..(p + 1) * d];
            let out = &mut den[src * d..(src + 1) * d];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += sigmoid(v + config.epsilon);
            }
        }

        // Node path: pre_x[i] = W1 x_i + sum_j eta_ij (hadamard) W2 x_j.
        let mut w2x = vec![0.0; n * d];
        gemm_nt(n, d, d, 1.0, x_in, &layer.w2, 0.0, &mut w2x);
        let mut pre_x = vec![0.0; n * d];
        gemm_nt(n, d, d, 1.0, x_in, &layer.w1, 0.0, &mut pre_x);
        for p in 0..m_dir {
            let (src, dst) = (topo.dir_src[p] as usize, topo.dir_dst[p] as usize);
            for c in 0..d {
                let eta = sigmoid(e_in[p * d + c]) / den[src * d + c];
                pre_x[src * d + c] += eta * w2x[dst * d + c];
            }
        }

        let (bnx, node_site, node_batch) = bn_forward(&pre_x, n, d, &layer.bn_node, mode);
        let mut x_out = x_in.clone();
        for (xo, &b) in x_out.iter_mut().zip(&bnx) {
            *xo += b.max(0.0);
        }

        // Edge path: pre_e[p] = W3 e_p + W4 x_src + W5 x_dst.
        let mut w4x = vec![0.0; n * d];
        let mut w5x = vec![0.0; n * d];
        gemm_nt(n, d, d, 1.0, x_in, &layer.w4, 0.0, &mut w4x);
        gemm_nt(n, d, d, 1.0, x_in, &layer.w5, 0.0, &mut w5x);
        let mut pre_e = vec![0.0; m_dir * d];
        gemm_nt(m_dir, d, d, 1.0, e_in, &layer.w3, 0.0, &mut pre_e);
        for p in 0..m_dir {
            let (src, dst) = (topo.dir_src[p] as usize, topo.dir_dst[p] as usize);
            let out = &mut pre_e[p * d..(p + 1) * d];
            for c in 0..d {
                out[c] += w4x[src * d + c] + w5x[dst * d + c];
            }
        }
        let (bne, edge_site, edge_batch) = bn_forward(&pre_e, m_dir, d, &layer.bn_edge, mode);
        let mut e_out = e_in.clone();
        for (eo, &b) in e_out.iter_mut().zip(&bne) {
            *eo += b.max(0.0);
        }

        if x_out.iter().chain(&e_out).any(|v| !v.is_finite()) {
            return Err(GnnError::NonFinite(format!("conv layer {l}")));
        }

        pre_x_all.push(pre_x);
        pre_e_all.push(pre_e);
        den_all.push(den);
        bn_node_sites.push(node_site);
        bn_edge_sites.push(edge_site);
        if let (Some(nb), Some(eb)) = (node_batch, edge_batch) {
            stats.node.push(nb);
            stats.edge.push(eb);
        }
        x_chain.push(x_out);
        e_chain.push(e_out);
    }

    // Head MLP on the final directed edge features; ReLU between layers,
    // raw output on the last.
    let mut head_pre = Vec::with_capacity(config.head_layers);
    let mut h = e_chain.last().unwrap().clone();
    for (t, lin) in params.head.iter().enumerate() {
        let out_dim = config.head_out_dim(t);
        let mut z = vec![0.0; m_dir * out_dim];
        gemm_nt(m_dir, d, out_dim, 1.0, &h, &lin.weight, 0.0, &mut z);
        add_bias(&mut z, &lin.bias, out_dim);
        head_pre.push(z.clone());
        if t + 1 < config.head_layers {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        h = z;
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(GnnError::NonFinite("head".into()));
    }

    // Undirected score = mean of the two directed head outputs. The two
    // entries of undirected edge g sit at directed indices 2g and 2g+1.
    let mut und_scores = vec![0.0; m_und];
    for (g, s) in und_scores.iter_mut().enumerate() {
        *s = 0.5 * (h[2 * g] + h[2 * g + 1]);
    }
    let mut per_graph = Vec::with_capacity(items.len());
    for &(start, end) in &topo.graph_und_ranges {
        per_graph.push(
            EdgeScores::new(und_scores[start..end].to_vec())
                .expect("finite activations imply finite scores"),
        );
    }

    let trace = ForwardTrace {
        topo,
        norm_mode: mode,
        node_feats,
        edge_feats,
        x: x_chain,
        e: e_chain,
        pre_x: pre_x_all,
        pre_e: pre_e_all,
        den: den_all,
        bn_node: bn_node_sites,
        bn_edge: bn_edge_sites,
        head_pre,
        batch_stats: if mode == NormMode::BatchStats {
            Some(stats)
        } else {
            None
        },
    };
    Ok((per_graph, trace))
}

/// BN forward over `count` rows of width `d`. Returns the normalized
/// output, the site statistics used, and (in BatchStats mode) the raw
/// batch mean/variance for the running-average update.
#[allow(clippy::type_complexity)]
fn bn_forward(
    pre: &[f64],
    count: usize,
    d: usize,
    bn: &super::BatchNorm,
    mode: NormMode,
) -> (Vec<f64>, BnSite, Option<(Vec<f64>, Vec<f64>)>) {
    let (mean, var, batch) = match mode {
        NormMode::FixedStats => (bn.running_mean.clone(), bn.running_var.clone(), None),
        NormMode::BatchStats => {
            let denom = count.max(1) as f64;
            let mut mean = vec![0.0; d];
            for row in pre.chunks_exact(d) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= denom;
            }
            let mut var = vec![0.0; d];
            for row in pre.chunks_exact(d) {
                for (c, (&v, &m)) in row.iter().zip(&mean).enumerate() {
                    var[c] += (v - m) * (v - m);
                }
            }
            for v in &mut var {
                *v /= denom;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = vec![0.0; pre.len()];
    for (row_out, row_in) in out.chunks_exact_mut(d).zip(pre.chunks_exact(d)) {
        for c in 0..d {
            let xhat = (row_in[c] - mean[c]) * inv_std[c];
            row_out[c] = bn.scale[c] * xhat + bn.shift[c];
        }
    }
    (out, BnSite { mean, inv_std }, batch)
}

/// BN reverse over `count` rows. In BatchStats mode the gradient flows
/// through the batch mean and variance; in FixedStats mode the statistics
/// are constants.
#[allow(clippy::too_many_arguments)]
fn bn_backward(
    pre: &[f64],
    dy: &[f64],
    count: usize,
    d: usize,
    bn: &super::BatchNorm,
    site: &BnSite,
    mode: NormMode,
    grad_scale: &mut [f64],
    grad_shift: &mut [f64],
) -> Vec<f64> {
    let mut dxhat_sum = vec![0.0; d];
    let mut dxhat_xhat_sum = vec![0.0; d];
    for (row_pre, row_dy) in pre.chunks_exact(d).zip(dy.chunks_exact(d)) {
        for c in 0..d {
            let xhat = (row_pre[c] - site.mean[c]) * site.inv_std[c];
            grad_shift[c] += row_dy[c];
            grad_scale[c] += row_dy[c] * xhat;
            let dxh = row_dy[c] * bn.scale[c];
            dxhat_sum[c] += dxh;
            dxhat_xhat_sum[c] += dxh * xhat;
        }
    }
    let mut dx = vec![0.0; pre.len()];
    match mode {
        NormMode::FixedStats => {
            for (row_dx, row_dy) in dx.chunks_exact_mut(d).zip(dy.chunks_exact(d)) {
                for c in 0..d {
                    row_dx[c] = row_dy[c] * bn.scale[c] * site.inv_std[c];
                }
            }
        }
        NormMode::BatchStats => {
            let n = count.max(1) as f64;
            for (row_dx, (row_pre, row_dy)) in dx
                .chunks_exact_mut(d)
                .zip(pre.chunks_exact(d).zip(dy.chunks_exact(d)))
            {
                for c in 0..d {
                    let xhat = (row_pre[c] - site.mean[c]) * site.inv_std[c];
                    let dxh = row_dy[c] * bn.scale[c];
                    row_dx[c] = site.inv_std[c]
                        * (dxh - dxhat_sum[c] / n - xhat * dxhat_xhat_sum[c] / n);
                }
            }
        }
    }
    dx
}

/// Exact gradient of `<grad_scores, scores>` with respect to every
/// trainable parameter and the input edge features. `grad_scores` holds
/// one slice per batch graph, in the same graph order as the forward.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_scores: &[&[f64]],
) -> Result<Gradients, GnnError> {
    let config = &params.config;
    let d = config.hidden;
    let topo = &trace.topo;
    if grad_scores.len() != topo.graph_und_ranges.len() {
        return Err(GnnError::ShapeMismatch(
            "one gradient slice per batch graph is required".into(),
        ));
    }
    let mut g_und = vec![0.0; topo.n_und];
    for (slice, &(start, end)) in grad_scores.iter().zip(&topo.graph_und_ranges) {
        if slice.len() != end - start {
            return Err(GnnError::ShapeMismatch(format!(
                "gradient slice has length {}, expected {}",
                slice.len(),
                end - start
            )));
        }
        g_und[start..end].copy_from_slice(slice);
    }

    let mut grads = Gradients::zeros(config);
    grads.input_edge_feats = vec![0.0; topo.n_und * config.edge_feat_dim];
    let (n, m_dir) = (topo.n_nodes, topo.n_dir);
    let hl = config.head_layers;

    // --- Head backward ---
    // Each directed entry receives half the undirected gradient.
    let mut g_z: Vec<f64> = (0..m_dir)
        .map(|p| 0.5 * g_und[topo.dir_und[p] as usize])
        .collect();
    let mut g_e: Vec<f64> = vec![0.0; m_dir * d];
    for t in (0..hl).rev() {
        let out_dim = config.head_out_dim(t);
        let lin = &params.head[t];
        let (gw, gb) = &mut grads.head[t];
        let relu_input: Vec<f64>;
        let input: &[f64] = if t == 0 {
            trace.e.last().unwrap()
        } else {
            relu_input = trace.head_pre[t - 1].iter().map(|&v| v.max(0.0)).collect();
            &relu_input
        };
        gemm_tn(m_dir, out_dim, d, 1.0, &g_z, input, 1.0, gw);
        add_column_sums(&g_z, out_dim, gb);
        let mut g_input = vec![0.0; m_dir * d];
        gemm(m_dir, out_dim, d, 1.0, &g_z, &lin.weight, 0.0, &mut g_input);
        if t == 0 {
            g_e = g_input;
        } else {
            let pre = &trace.head_pre[t - 1];
            g_z = g_input
                .iter()
                .zip(pre)
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
        }
    }

    // g_x / g_e always hold the gradient w.r.t. the CURRENT layer
    // boundary's activations (x_{l+1}, e_{l+1} at the top of the loop).
    let mut g_x: Vec<f64> = vec![0.0; n * d];

    for l in (0..config.layers).rev() {
        let layer = &params.layers[l];
        let lg = &mut grads.layers[l];
        let x_in = &trace.x[l];
        let e_in = &trace.e[l];
        let den = &trace.den[l];
        let g_x_next = std::mem::take(&mut g_x);
        let g_e_next = std::mem::take(&mut g_e);
        // Residual terms flow through unchanged.
        let mut g_x_cur = g_x_next.clone();
        let mut g_e_cur = g_e_next.clone();

        // --- Edge path: e_{l+1} = e_l + ReLU(BN(pre_e)) ---
        let pre_e = &trace.pre_e[l];
        let site_e = &trace.bn_edge[l];
        let mut dy_e = vec![0.0; m_dir * d];
        for p in 0..m_dir {
            for c in 0..d {
                let xhat = (pre_e[p * d + c] - site_e.mean[c]) * site_e.inv_std[c];
                let bn_out = layer.bn_edge.scale[c] * xhat + layer.bn_edge.shift[c];
                if bn_out > 0.0 {
                    dy_e[p * d + c] = g_e_next[p * d + c];
                }
            }
        }
        let d_pre_e = bn_backward(
            pre_e,
            &dy_e,
            m_dir,
            d,
            &layer.bn_edge,
            site_e,
            trace.norm_mode,
            &mut lg.bn_edge_scale,
            &mut lg.bn_edge_shift,
        );
        // W3 branch.
        gemm_tn(m_dir, d, d, 1.0, &d_pre_e, e_in, 1.0, &mut lg.w3);
        gemm(m_dir, d, d, 1.0, &d_pre_e, &layer.w3, 1.0, &mut g_e_cur);
        // W4 / W5 branches act on the gathered endpoint activations.
        let x_src = topo.gather_rows(&topo.dir_src, x_in, d);
        gemm_tn(m_dir, d, d, 1.0, &d_pre_e, &x_src, 1.0, &mut lg.w4);
        let x_dst = topo.gather_rows(&topo.dir_dst, x_in, d);
        gemm_tn(m_dir, d, d, 1.0, &d_pre_e, &x_dst, 1.0, &mut lg.w5);
        let mut t_buf = vec![0.0; m_dir * d];
        gemm(m_dir, d, d, 1.0, &d_pre_e, &layer.w4, 0.0, &mut t_buf);
        topo.scatter_add_rows(&topo.dir_src, &t_buf, &mut g_x_cur, d);
        gemm(m_dir, d, d, 1.0, &d_pre_e, &layer.w5, 0.0, &mut t_buf);
        topo.scatter_add_rows(&topo.dir_dst, &t_buf, &mut g_x_cur, d);

        // --- Node path: x_{l+1} = x_l + ReLU(BN(pre_x)) ---
        let pre_x = &trace.pre_x[l];
        let site_x = &trace.bn_node[l];
        let mut dy_x = vec![0.0; n * d];
        for i in 0..n {
            for c in 0..d {
                let xhat = (pre_x[i * d + c] - site_x.mean[c]) * site_x.inv_std[c];
                let bn_out = layer.bn_node.scale[c] * xhat + layer.bn_node.shift[c];
                if bn_out > 0.0 {
                    dy_x[i * d + c] = g_x_next[i * d + c];
                }
            }
        }
        let d_pre_x = bn_backward(
            pre_x,
            &dy_x,
            n,
            d,
            &layer.bn_node,
            site_x,
            trace.norm_mode,
            &mut lg.bn_node_scale,
            &mut lg.bn_node_shift,
        );
        // W1 branch.
        gemm_tn(n, d, d, 1.0, &d_pre_x, x_in, 1.0, &mut lg.w1);
        gemm(n, d, d, 1.0, &d_pre_x, &layer.w1, 1.0, &mut g_x_cur);
        // Gated aggregation branch: pre_x[src] += eta (hadamard) W2 x_dst
        // where eta = sigmoid(e) / den[src]. Recompute W2 x on the fly.
        let mut w2x = vec![0.0; n * d];
        gemm_nt(n, d, d, 1.0, x_in, &layer.w2, 0.0, &mut w2x);
        let mut d_w2x = vec![0.0; n * d];
        let mut d_den = vec![0.0; n * d];
        for p in 0..m_dir {
            let (src, dst) = (topo.dir_src[p] as usize, topo.dir_dst[p] as usize);
            for c in 0..d {
                let gpx = d_pre_x[src * d + c];
                if gpx == 0.0 {
                    continue;
                }
                let sig = sigmoid(e_in[p * d + c]);
                let den_v = den[src * d + c];
                let eta = sig / den_v;
                let d_eta = gpx * w2x[dst * d + c];
                d_w2x[dst * d + c] += eta * gpx;
                // d/d sig and the shared d/d den accumulator.
                let d_sig = d_eta / den_v;
                d_den[src * d + c] -= d_eta * sig / (den_v * den_v);
                g_e_cur[p * d + c] += d_sig * sig * (1.0 - sig);
            }
        }
        // Denominator contributions: den[src] = sum sigmoid(e + eps).
        for p in 0..m_dir {
            let src = topo.dir_src[p] as usize;
            for c in 0..d {
                let dd = d_den[src * d + c];
                if dd == 0.0 {
                    continue;
                }
                let sig_eps = sigmoid(e_in[p * d + c] + config.epsilon);
                g_e_cur[p * d + c] += dd * sig_eps * (1.0 - sig_eps);
            }
        }
        // W2 branch.
        gemm_tn(n, d, d, 1.0, &d_w2x, x_in, 1.0, &mut lg.w2);
        gemm(n, d, d, 1.0, &d_w2x, &layer.w2, 1.0, &mut g_x_cur);

        g_x = g_x_cur;
        g_e = g_e_cur;
    }

    // --- Embedding backward ---
    let fd_n = config.node_feat_dim;
    gemm_tn(n, d, fd_n, 1.0, &g_x, &trace.node_feats, 1.0, &mut grads.embed_node_weight);
    add_column_sums(&g_x, d, &mut grads.embed_node_bias);

    let fd_e = config.edge_feat_dim;
    let dir_feats = topo.gather_rows(&topo.dir_und, &trace.edge_feats, fd_e);
    gemm_tn(m_dir, d, fd_e, 1.0, &g_e, &dir_feats, 1.0, &mut grads.embed_edge_weight);
    add_column_sums(&g_e, d, &mut grads.embed_edge_bias);
    let mut feat_grads = vec![0.0; m_dir * fd_e];
    gemm(m_dir, d, fd_e, 1.0, &g_e, &params.embed_edge.weight, 0.0, &mut feat_grads);
    topo.scatter_add_rows(&topo.dir_und, &feat_grads, &mut grads.input_edge_feats, fd_e);

    Ok(grads)
}
