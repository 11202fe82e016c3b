//! Function-level graph encoder.
//!
//! Node states start from block vectors and pass through `L` message-passing
//! layers. Small graphs then get a 2-tuple stage: every edge-connected node
//! pair becomes a pair node (feature = sum of endpoint states) and one more
//! aggregation layer runs over the pair graph, where pairs sharing a node are
//! neighbours. The readout adds the mean node state and the mean pair state,
//! projects to [`EMBED_DIM`] and L2-normalizes.
//!
//! Batches are encoded as one disjoint union; nothing is shared across graphs
//! except the parameters.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{normalize_rows, normalize_rows_backward, uniform_matrix, uniform_vector, Activation};
use crate::params::ParamSet;

pub const EMBED_DIM: usize = 256;
pub const DEFAULT_TWO_TUPLE_NODE_CAP: usize = 30;

/// `h <- act(W_self h + W_nbr sum(nbr h) [+ W_out sum(succ h)] + b)`.
///
/// Without `w_out`, `w_nbr` aggregates the undirected neighbourhood; with it,
/// `w_nbr` aggregates predecessors and `w_out` successors.
#[derive(Debug, Clone, PartialEq)]
pub struct MpLayer {
    pub w_self: Array2<f64>,
    pub w_nbr: Array2<f64>,
    pub w_out: Option<Array2<f64>>,
    pub bias: Array1<f64>,
}

impl MpLayer {
    fn init<R: Rng>(rng: &mut R, input: usize, output: usize, directed: bool) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w_self = uniform_matrix(rng, output, input, bound);
        let w_nbr = uniform_matrix(rng, output, input, bound);
        let w_out = directed.then(|| uniform_matrix(rng, output, input, bound));
        let bias = uniform_vector(rng, output, bound);
        Self {
            w_self,
            w_nbr,
            w_out,
            bias,
        }
    }

    fn input_width(&self) -> usize {
        self.w_self.ncols()
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((format!("{prefix}.w_self"), self.w_self.view().into_dyn()));
        out.push((format!("{prefix}.w_nbr"), self.w_nbr.view().into_dyn()));
        if let Some(w) = &self.w_out {
            out.push((format!("{prefix}.w_out"), w.view().into_dyn()));
        }
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    fn push_tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((format!("{prefix}.w_self"), self.w_self.view_mut().into_dyn()));
        out.push((format!("{prefix}.w_nbr"), self.w_nbr.view_mut().into_dyn()));
        if let Some(w) = &mut self.w_out {
            out.push((format!("{prefix}.w_out"), w.view_mut().into_dyn()));
        }
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoderParams {
    pub layers: Vec<MpLayer>,
    pub pair: Option<MpLayer>,
    pub readout_w: Array2<f64>,
    pub readout_b: Array1<f64>,
    pub activation: Activation,
    pub two_tuple_node_cap: usize,
}

impl GraphEncoderParams {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(self.readout_w.ncols(), MpLayer::input_width)
    }

    pub fn hidden_width(&self) -> usize {
        self.readout_w.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.readout_w.nrows()
    }

    pub fn directed(&self) -> bool {
        self.layers.first().is_some_and(|l| l.w_out.is_some())
    }

    pub fn two_tuple_enabled(&self) -> bool {
        self.pair.is_some()
    }
}

impl ParamSet for GraphEncoderParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_tensors(&format!("layer{i}"), &mut out);
        }
        if let Some(p) = &self.pair {
            p.push_tensors("pair", &mut out);
        }
        out.push(("readout_w".into(), self.readout_w.view().into_dyn()));
        out.push(("readout_b".into(), self.readout_b.view().into_dyn()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_tensors_mut(&format!("layer{i}"), &mut out);
        }
        if let Some(p) = &mut self.pair {
            p.push_tensors_mut("pair", &mut out);
        }
        out.push(("readout_w".into(), self.readout_w.view_mut().into_dyn()));
        out.push(("readout_b".into(), self.readout_b.view_mut().into_dyn()));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEncoderConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    pub activation: Activation,
    pub two_tuple: bool,
    pub two_tuple_node_cap: usize,
    pub directed: bool,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        Self {
            input: 320,
            hidden: 128,
            output: EMBED_DIM,
            layers: 3,
            activation: Activation::Tanh,
            two_tuple: true,
            two_tuple_node_cap: DEFAULT_TWO_TUPLE_NODE_CAP,
            directed: false,
        }
    }
}

pub fn init_graph_params(config: &GraphEncoderConfig, seed: u64) -> Result<GraphEncoderParams> {
    if config.input == 0 || config.hidden == 0 || config.output == 0 {
        return Err(Error::Precondition("graph encoder widths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let input = if l == 0 { config.input } else { config.hidden };
        layers.push(MpLayer::init(&mut rng, input, config.hidden, config.directed));
    }
    let readout_in = if config.layers == 0 { config.input } else { config.hidden };
    let pair = config
        .two_tuple
        .then(|| MpLayer::init(&mut rng, readout_in, readout_in, false));
    let bound = 1.0 / (readout_in as f64).sqrt();
    Ok(GraphEncoderParams {
        layers,
        pair,
        readout_w: uniform_matrix(&mut rng, config.output, readout_in, bound),
        readout_b: uniform_vector(&mut rng, config.output, bound),
        activation: config.activation,
        two_tuple_node_cap: config.two_tuple_node_cap,
    })
}

/// Disjoint union of several graphs with every adjacency structure the
/// encoder needs, in global (offset) indices.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    node_offsets: Vec<usize>,
    nbrs: Vec<Vec<usize>>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    pair_offsets: Vec<usize>,
    pair_nbrs: Vec<Vec<usize>>,
}

impl GraphBatch {
    /// `graphs[g] = (node count, directed edges)`. Pair structures are built
    /// only for graphs with at most `pair_cap` nodes (none when `None`).
    pub fn new(graphs: &[(usize, &[(usize, usize)])], pair_cap: Option<usize>) -> Result<Self> {
        let mut node_offsets = vec![0];
        let mut pair_offsets = vec![0];
        let mut nbr_sets: Vec<BTreeSet<usize>> = Vec::new();
        let mut pred_sets: Vec<BTreeSet<usize>> = Vec::new();
        let mut succ_sets: Vec<BTreeSet<usize>> = Vec::new();
        let mut pairs = Vec::new();
        for &(n, edges) in graphs {
            if n == 0 {
                return Err(Error::Precondition("graph has no nodes".into()));
            }
            let base = *node_offsets.last().unwrap();
            nbr_sets.extend((0..n).map(|_| BTreeSet::new()));
            pred_sets.extend((0..n).map(|_| BTreeSet::new()));
            succ_sets.extend((0..n).map(|_| BTreeSet::new()));
            let mut local_pairs = BTreeSet::new();
            for &(a, b) in edges {
                if a >= n || b >= n {
                    return Err(Error::IndexOutOfBounds {
                        what: "edge endpoint",
                        index: a.max(b),
                        len: n,
                    });
                }
                let (a, b) = (base + a, base + b);
                nbr_sets[a].insert(b);
                nbr_sets[b].insert(a);
                succ_sets[a].insert(b);
                pred_sets[b].insert(a);
                if a != b {
                    local_pairs.insert((a.min(b), a.max(b)));
                }
            }
            if pair_cap.is_some_and(|cap| n <= cap) {
                pairs.extend(local_pairs);
            }
            node_offsets.push(base + n);
            pair_offsets.push(pairs.len());
        }
        let total = *node_offsets.last().unwrap();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); total];
        for (p, &(u, v)) in pairs.iter().enumerate() {
            incident[u].push(p);
            incident[v].push(p);
        }
        let pair_nbrs = pairs
            .iter()
            .enumerate()
            .map(|(p, &(u, v))| {
                incident[u]
                    .iter()
                    .chain(&incident[v])
                    .copied()
                    .filter(|&q| q != p)
                    .collect()
            })
            .collect();
        let to_vecs = |sets: Vec<BTreeSet<usize>>| sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Self {
            node_offsets,
            nbrs: to_vecs(nbr_sets),
            preds: to_vecs(pred_sets),
            succs: to_vecs(succ_sets),
            pairs,
            pair_offsets,
            pair_nbrs,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn node_count(&self) -> usize {
        *self.node_offsets.last().unwrap()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

fn aggregate(lists: &[Vec<usize>], x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((lists.len(), x.ncols()));
    for (mut row, list) in out.outer_iter_mut().zip(lists) {
        for &u in list {
            row += &x.row(u);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    agg: Array2<f64>,
    agg_out: Option<Array2<f64>>,
    output: Array2<f64>,
}

fn layer_forward(
    layer: &MpLayer,
    act: Activation,
    x: Array2<f64>,
    nbrs: &[Vec<usize>],
    succs: Option<&[Vec<usize>]>,
) -> LayerCache {
    let agg = aggregate(nbrs, x.view());
    let mut pre = x.dot(&layer.w_self.t()) + agg.dot(&layer.w_nbr.t());
    let agg_out = match (&layer.w_out, succs) {
        (Some(w), Some(succs)) => {
            let a = aggregate(succs, x.view());
            pre += &a.dot(&w.t());
            Some(a)
        }
        _ => None,
    };
    pre += &layer.bias;
    pre.mapv_inplace(|v| act.apply(v));
    LayerCache {
        input: x,
        agg,
        agg_out,
        output: pre,
    }
}

/// Returns the gradient w.r.t. the layer input. `transpose_nbrs` must be the
/// transpose of the lists used for `agg` (the same lists when symmetric).
fn layer_backward(
    layer: &MpLayer,
    act: Activation,
    cache: &LayerCache,
    d_out: &Array2<f64>,
    transpose_nbrs: &[Vec<usize>],
    transpose_succs: Option<&[Vec<usize>]>,
    grad: &mut MpLayer,
) -> Array2<f64> {
    let mut d_pre = d_out.clone();
    d_pre.zip_mut_with(&cache.output, |g, &y| *g *= act.grad_from_output(y));
    grad.w_self += &d_pre.t().dot(&cache.input);
    grad.w_nbr += &d_pre.t().dot(&cache.agg);
    grad.bias += &d_pre.sum_axis(Axis(0));
    let mut dx = d_pre.dot(&layer.w_self);
    dx += &aggregate(transpose_nbrs, d_pre.dot(&layer.w_nbr).view());
    if let (Some(w), Some(gw), Some(a), Some(ts)) = (&layer.w_out, &mut grad.w_out, &cache.agg_out, transpose_succs) {
        *gw += &d_pre.t().dot(a);
        dx += &aggregate(ts, d_pre.dot(w).view());
    }
    dx
}

#[derive(Debug, Clone)]
pub struct GraphCache {
    layers: Vec<LayerCache>,
    pair: Option<LayerCache>,
    readout_in: Array2<f64>,
    embeddings: Array2<f64>,
    norms: Array1<f64>,
    final_nodes: Array2<f64>,
}

/// Node states after the message-passing layers (before pairs and readout).
pub fn node_states(params: &GraphEncoderParams, batch: &GraphBatch, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (_, cache) = forward(params, batch, x)?;
    Ok(cache.final_nodes)
}

fn readout_input(batch: &GraphBatch, nodes: &Array2<f64>, pairs: Option<&Array2<f64>>) -> Array2<f64> {
    let b = batch.graph_count();
    let mut r = Array2::zeros((b, nodes.ncols()));
    for g in 0..b {
        let (s0, s1) = (batch.node_offsets[g], batch.node_offsets[g + 1]);
        let mut row = r.row_mut(g);
        row.assign(&nodes.slice(s![s0..s1, ..]).mean_axis(Axis(0)).unwrap());
        if let Some(p) = pairs {
            let (p0, p1) = (batch.pair_offsets[g], batch.pair_offsets[g + 1]);
            if p1 > p0 {
                row += &p.slice(s![p0..p1, ..]).mean_axis(Axis(0)).unwrap();
            }
        }
    }
    r
}

/// Encodes every graph of the batch; row `g` is the unit-norm embedding of
/// graph `g`.
pub fn forward(params: &GraphEncoderParams, batch: &GraphBatch, x: ArrayView2<f64>) -> Result<(Array2<f64>, GraphCache)> {
    if x.nrows() != batch.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} node feature rows for {} nodes",
            x.nrows(),
            batch.node_count()
        )));
    }
    if x.ncols() != params.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "node feature width {} vs encoder input {}",
            x.ncols(),
            params.input_width()
        )));
    }
    let directed = params.directed();
    let (nbrs, succs) = if directed {
        (&batch.preds, Some(batch.succs.as_slice()))
    } else {
        (&batch.nbrs, None)
    };
    let mut h = x.to_owned();
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let c = layer_forward(layer, params.activation, h, nbrs, succs);
        h = c.output.clone();
        layers.push(c);
    }
    let pair = match &params.pair {
        Some(p) if batch.pair_count() > 0 => {
            let mut p0 = Array2::zeros((batch.pair_count(), h.ncols()));
            for (mut row, &(u, v)) in p0.outer_iter_mut().zip(&batch.pairs) {
                row.assign(&(&h.row(u) + &h.row(v)));
            }
            Some(layer_forward(p, params.activation, p0, &batch.pair_nbrs, None))
        }
        _ => None,
    };
    let readout_in = readout_input(batch, &h, pair.as_ref().map(|c| &c.output));
    let z = readout_in.dot(&params.readout_w.t()) + &params.readout_b;
    let (embeddings, norms) = normalize_rows(z.view());
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph embedding".into()));
    }
    Ok((
        embeddings.clone(),
        GraphCache {
            layers,
            pair,
            readout_in,
            embeddings,
            norms,
            final_nodes: h,
        },
    ))
}

/// Backpropagates `d_emb` (gradient w.r.t. the unit embeddings); returns the
/// parameter gradients and the gradient w.r.t. the node features.
pub fn backward(
    params: &GraphEncoderParams,
    batch: &GraphBatch,
    cache: &GraphCache,
    d_emb: ArrayView2<f64>,
) -> (GraphEncoderParams, Array2<f64>) {
    let mut grads = crate::params::zeros_like(params);
    let dz = normalize_rows_backward(cache.embeddings.view(), &cache.norms, d_emb);
    grads.readout_w = dz.t().dot(&cache.readout_in);
    grads.readout_b = dz.sum_axis(Axis(0));
    let dr = dz.dot(&params.readout_w);

    let width = cache.final_nodes.ncols();
    let mut dh = Array2::zeros((batch.node_count(), width));
    for g in 0..batch.graph_count() {
        let (s0, s1) = (batch.node_offsets[g], batch.node_offsets[g + 1]);
        let share = &dr.row(g) / (s1 - s0) as f64;
        for v in s0..s1 {
            let mut row = dh.row_mut(v);
            row += &share;
        }
    }
    if let (Some(pc), Some(pl), Some(pg)) = (&cache.pair, &params.pair, &mut grads.pair) {
        let mut dp = Array2::zeros((batch.pair_count(), width));
        for g in 0..batch.graph_count() {
            let (p0, p1) = (batch.pair_offsets[g], batch.pair_offsets[g + 1]);
            if p1 > p0 {
                let share = &dr.row(g) / (p1 - p0) as f64;
                for p in p0..p1 {
                    dp.row_mut(p).assign(&share);
                }
            }
        }
        let dp0 = layer_backward(pl, params.activation, pc, &dp, &batch.pair_nbrs, None, pg);
        for (row, &(u, v)) in dp0.outer_iter().zip(&batch.pairs) {
            let mut a = dh.row_mut(u);
            a += &row;
            let mut b = dh.row_mut(v);
            b += &row;
        }
    }
    let directed = params.directed();
    // Transposes: undirected lists are symmetric; preds^T = succs.
    let (t_nbrs, t_succs) = if directed {
        (&batch.succs, Some(batch.preds.as_slice()))
    } else {
        (&batch.nbrs, None)
    };
    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        dh = layer_backward(layer, params.activation, lc, &dh, t_nbrs, t_succs, &mut grads.layers[l]);
    }
    (grads, dh)
}

/// Single-graph convenience wrapper around [`forward`].
pub fn encode_graph(node_feats: ArrayView2<f64>, edges: &[(usize, usize)], params: &GraphEncoderParams) -> Result<Array1<f64>> {
    let cap = params.pair.as_ref().map(|_| params.two_tuple_node_cap);
    let batch = GraphBatch::new(&[(node_feats.nrows(), edges)], cap)?;
    let (e, _) = forward(params, &batch, node_feats)?;
    Ok(e.row(0).to_owned())
}
