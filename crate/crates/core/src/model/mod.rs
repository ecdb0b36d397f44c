//! Small message-passing regressors with hand-written reverse-mode gradients.
//!
//! All parameters live in one flat vector. [`ParamLayout`] maps named blocks
//! (row-major matrices and vectors) onto that vector; its shape depends only
//! on the [`RegressorConfig`]. Per message-passing layer the blocks are:
//!
//! | architecture | blocks                                             |
//! |--------------|----------------------------------------------------|
//! | `gcn`        | `w` (H×d), `w_edge` (H×3), `b` (H)                 |
//! | `gin`        | `w_edge` (d×3), `w1` (H×d), `b1` (H), `w2` (H×H), `b2` (H) |
//! | `gatv2lite`  | `w_src` (H×d), `w_dst` (H×d), `att` (H), `w_edge` (H×3), `b` (H) |
//!
//! with `d` the input width of the layer (the atom feature width for the
//! first layer, `H = hidden_dim` afterwards). The readout sums node states
//! into a graph embedding `p` and feeds it to the mean head
//! `ŷ = a2·relu(A1 p + c1) + c2` (`head_w1`, `head_b1`, `head_w2`, `head_b2`).
//! With a variance head, `σ² = softplus(b2·relu(B1 p + d1) + d2) + 1e-6`
//! uses the blocks `var_w1`, `var_b1`, `var_w2`, `var_b2`.
//!
//! Graphs are converted to [`PreparedGraph`] in canonical atom order, so
//! relabeled inputs run through identical floating-point operations.

mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{BondOrder, Element, MolecularGraph};

pub use train::{
    loss_and_gradient, mse_loss, mve_loss, train, train_mse, train_mve, LossKind, MveConfig,
    TrainConfig, TrainError,
};

/// Width of the per-atom input features.
pub const INPUT_DIM: usize = Element::ALL.len() + 4;
/// Lower bound added to the softplus variance output.
pub const SIGMA2_FLOOR: f64 = 1e-6;
const LEAKY_SLOPE: f64 = 0.2;
const CHECKPOINT_FORMAT: &str = "cfuq-regressor";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Gin,
    Gatv2lite,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Gcn, Architecture::Gin, Architecture::Gatv2lite];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gcn => "gcn",
            Architecture::Gin => "gin",
            Architecture::Gatv2lite => "gatv2lite",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub hidden_dim: usize,
    /// Adds the variance head used by mean-variance estimation.
    #[serde(default)]
    pub variance_head: bool,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            architecture: Architecture::Gin,
            layers: 3,
            hidden_dim: 32,
            variance_head: false,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "layers and hidden_dim must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter vector has length {got}, layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("parameter vector contains non-finite entries")]
    NonFiniteParams,
    #[error("invalid regressor config: {0}")]
    InvalidConfig(String),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A contiguous row-major block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.len()]
    }

    fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerBlocks {
    Gcn { w: Block, w_edge: Block, b: Block },
    Gin { w_edge: Block, w1: Block, b1: Block, w2: Block, b2: Block },
    Gat { w_src: Block, w_dst: Block, att: Block, w_edge: Block, b: Block },
}

#[derive(Debug, Clone, PartialEq)]
struct HeadBlocks {
    w1: Block,
    b1: Block,
    w2: Block,
    b2: Block,
}

/// Named blocks of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    layers: Vec<LayerBlocks>,
    head: HeadBlocks,
    var_head: Option<HeadBlocks>,
    names: Vec<(String, Block)>,
    len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &RegressorConfig) -> Self {
        let h = cfg.hidden_dim;
        let e = BondOrder::ALL.len();
        let mut names = Vec::new();
        let mut offset = 0;
        let mut alloc = |name: String, rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            names.push((name, b));
            b
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d = if l == 0 { INPUT_DIM } else { h };
            let mut a = |n: &str, r: usize, c: usize| alloc(format!("layer{l}.{n}"), r, c);
            layers.push(match cfg.architecture {
                Architecture::Gcn => LayerBlocks::Gcn {
                    w: a("w", h, d),
                    w_edge: a("w_edge", h, e),
                    b: a("b", h, 1),
                },
                Architecture::Gin => LayerBlocks::Gin {
                    w_edge: a("w_edge", d, e),
                    w1: a("w1", h, d),
                    b1: a("b1", h, 1),
                    w2: a("w2", h, h),
                    b2: a("b2", h, 1),
                },
                Architecture::Gatv2lite => LayerBlocks::Gat {
                    w_src: a("w_src", h, d),
                    w_dst: a("w_dst", h, d),
                    att: a("att", h, 1),
                    w_edge: a("w_edge", h, e),
                    b: a("b", h, 1),
                },
            });
        }
        let mut head = |prefix: &str| HeadBlocks {
            w1: alloc(format!("{prefix}_w1"), h, h),
            b1: alloc(format!("{prefix}_b1"), h, 1),
            w2: alloc(format!("{prefix}_w2"), 1, h),
            b2: alloc(format!("{prefix}_b2"), 1, 1),
        };
        let mean_head = head("head");
        let var_head = cfg.variance_head.then(|| head("var"));
        ParamLayout {
            layers,
            head: mean_head,
            var_head,
            names,
            len: offset,
        }
    }

    /// Total parameter count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Blocks in storage order with their names.
    pub fn blocks(&self) -> &[(String, Block)] {
        &self.names
    }

    pub fn block(&self, name: &str) -> Option<Block> {
        self.names.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }
}

/// Atom features in canonical order plus neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    features: Vec<f64>,
    /// `(neighbor, bond order index)` sorted by neighbor.
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl PreparedGraph {
    pub fn new(g: &MolecularGraph) -> Self {
        let order = g.canonical_order();
        let n = order.len();
        let mut rank = vec![0; n];
        for (r, &atom) in order.iter().enumerate() {
            rank[atom] = r;
        }
        let raw = g.node_features();
        let mut features = Vec::with_capacity(n * INPUT_DIM);
        let mut neighbors = Vec::with_capacity(n);
        for &atom in order {
            let row = &raw[atom];
            features.extend_from_slice(&row[..Element::ALL.len()]);
            features.push(0.1 * row[Element::ALL.len()]);
            features.push(row[Element::ALL.len() + 1]);
            features.push(0.25 * g.degree(atom) as f64);
            features.push(0.25 * f64::from(g.implicit_hydrogens(atom)));
            let mut nb: Vec<(usize, usize)> = g
                .neighbors(atom)
                .iter()
                .map(|&(j, order)| (rank[j], order.index()))
                .collect();
            nb.sort_unstable();
            neighbors.push(nb);
        }
        PreparedGraph {
            features,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y_hat: f64,
    /// Present only for regressors with a variance head.
    pub sigma2: Option<f64>,
    /// Pooled graph representation fed to the heads.
    pub embedding: Vec<f64>,
}

/// Network configuration together with its parameters.
///
/// Serializes as a versioned `(config, params)` checkpoint; floats round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct Regressor {
    config: RegressorConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: RegressorConfig,
    params: Vec<f64>,
}

impl From<Regressor> for Checkpoint {
    fn from(r: Regressor) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: r.config,
            params: r.params,
        }
    }
}

impl TryFrom<Checkpoint> for Regressor {
    type Error = ModelError;

    fn try_from(ck: Checkpoint) -> Result<Self, Self::Error> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Regressor::from_params(ck.config, ck.params)
    }
}

impl Regressor {
    pub fn from_params(config: RegressorConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.len() {
            return Err(ModelError::LayoutMismatch {
                expected: layout.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParams);
        }
        Ok(Regressor {
            config,
            layout,
            params,
        })
    }

    pub fn zeros(config: RegressorConfig) -> Result<Self, ModelError> {
        let n = ParamLayout::new(&config).len();
        Regressor::from_params(config, vec![0.0; n])
    }

    /// Normal initialization with variance 1/fan_in for matrices. Biases and the final
    /// projections of both heads start at 0, so the first updates only move
    /// the output layer.
    pub fn init<R: Rng + ?Sized>(config: RegressorConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.len()];
        for (name, block) in layout.blocks() {
            let is_bias = block.cols == 1 && !name.ends_with(".att");
            if is_bias || name == "head_w2" || name == "var_w2" {
                continue;
            }
            let std = if block.rows == 1 || name.ends_with(".att") {
                (1.0 / block.len() as f64).sqrt()
            } else {
                (1.0 / block.cols as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in block.of_mut(&mut params) {
                *p = normal.sample(rng);
            }
        }
        Ok(Regressor {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameters; the length must match the layout.
    pub fn set_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::LayoutMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn predict(&self, g: &MolecularGraph) -> Prediction {
        self.predict_prepared(&PreparedGraph::new(g))
    }

    pub fn predict_prepared(&self, g: &PreparedGraph) -> Prediction {
        self.forward(g).0
    }

    pub fn embed(&self, g: &MolecularGraph) -> Vec<f64> {
        self.predict(g).embedding
    }

    /// Adds the gradient of `dl_dy · ŷ + dl_dsigma2 · σ²` with respect to the
    /// parameters into `grad` and returns the forward prediction.
    pub fn accumulate_gradient(
        &self,
        g: &PreparedGraph,
        dl_dy: f64,
        dl_dsigma2: f64,
        grad: &mut [f64],
    ) -> Prediction {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let (pred, cache) = self.forward(g);
        self.backward(g, &cache, dl_dy, dl_dsigma2, grad);
        pred
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    fn forward(&self, g: &PreparedGraph) -> (Prediction, Cache) {
        let h = self.config.hidden_dim;
        let n = g.node_count();
        let p = &self.params;
        let mut state = g.features.clone();
        let mut d = INPUT_DIM;
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for blocks in &self.layout.layers {
            let (out, cache) = match blocks {
                LayerBlocks::Gcn { w, w_edge, b } => {
                    gcn_forward(g, &state, d, h, w.of(p), w_edge.of(p), b.of(p))
                }
                LayerBlocks::Gin { w_edge, w1, b1, w2, b2 } => gin_forward(
                    g,
                    &state,
                    d,
                    h,
                    w_edge.of(p),
                    (w1.of(p), b1.of(p)),
                    (w2.of(p), b2.of(p)),
                ),
                LayerBlocks::Gat { w_src, w_dst, att, w_edge, b } => gat_forward(
                    g,
                    &state,
                    d,
                    h,
                    (w_src.of(p), w_dst.of(p)),
                    att.of(p),
                    w_edge.of(p),
                    b.of(p),
                ),
            };
            layers.push(LayerCache {
                input: std::mem::replace(&mut state, out),
                input_dim: d,
                inner: cache,
            });
            d = h;
        }
        let mut pooled = vec![0.0; h];
        for i in 0..n {
            for (acc, v) in pooled.iter_mut().zip(&state[i * h..(i + 1) * h]) {
                *acc += v;
            }
        }
        let (y_hat, mean_hidden) = head_forward(&self.layout.head, p, &pooled);
        let (sigma2, var_hidden) = match &self.layout.var_head {
            Some(vh) => {
                let (s, hidden) = head_forward(vh, p, &pooled);
                (Some((s, softplus(s) + SIGMA2_FLOOR)), Some(hidden))
            }
            None => (None, None),
        };
        let pred = Prediction {
            y_hat,
            sigma2: sigma2.map(|(_, v)| v),
            embedding: pooled.clone(),
        };
        let cache = Cache {
            layers,
            pooled,
            mean_hidden,
            var_hidden,
            var_logit: sigma2.map(|(s, _)| s),
        };
        (pred, cache)
    }

    fn backward(&self, g: &PreparedGraph, cache: &Cache, dl_dy: f64, dl_ds2: f64, grad: &mut [f64]) {
        let h = self.config.hidden_dim;
        let n = g.node_count();
        let p = &self.params;
        let mut g_pool = vec![0.0; h];
        head_backward(&self.layout.head, p, &cache.pooled, &cache.mean_hidden, dl_dy, grad, &mut g_pool);
        if let (Some(vh), Some(hidden), Some(s)) = (&self.layout.var_head, &cache.var_hidden, cache.var_logit) {
            let dl_ds = dl_ds2 * sigmoid(s);
            head_backward(vh, p, &cache.pooled, hidden, dl_ds, grad, &mut g_pool);
        }
        let mut g_state: Vec<f64> = (0..n).flat_map(|_| g_pool.iter().copied()).collect();
        for (blocks, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            let d = lc.input_dim;
            g_state = match (blocks, &lc.inner) {
                (LayerBlocks::Gcn { w, w_edge, b }, InnerCache::Gcn { pre }) => {
                    gcn_backward(g, &lc.input, d, h, pre, &g_state, p, grad, *w, *w_edge, *b)
                }
                (LayerBlocks::Gin { w_edge, w1, b1, w2, b2 }, InnerCache::Gin { s, z1, z2 }) => gin_backward(
                    g,
                    d,
                    h,
                    (s, z1, z2),
                    &g_state,
                    p,
                    grad,
                    [*w_edge, *w1, *b1, *w2, *b2],
                ),
                (LayerBlocks::Gat { w_src, w_dst, att, w_edge, b }, InnerCache::Gat { q, v, alpha, z }) => {
                    gat_backward(
                        g,
                        &lc.input,
                        d,
                        h,
                        (q, v, alpha, z),
                        &g_state,
                        p,
                        grad,
                        [*w_src, *w_dst, *att, *w_edge, *b],
                    )
                }
                _ => unreachable!("cache matches layout"),
            };
        }
    }
}

struct Cache {
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    mean_hidden: Vec<f64>,
    var_hidden: Option<Vec<f64>>,
    var_logit: Option<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    input_dim: usize,
    inner: InnerCache,
}

enum InnerCache {
    Gcn {
        pre: Vec<f64>,
    },
    Gin {
        s: Vec<f64>,
        z1: Vec<f64>,
        z2: Vec<f64>,
    },
    Gat {
        q: Vec<f64>,
        /// `p_i + q_c` for every (node, candidate) pair, candidates = self then neighbors.
        v: Vec<f64>,
        alpha: Vec<f64>,
        z: Vec<f64>,
    },
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `out += W x` for row-major `W` with `out.len()` rows.
fn mv_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ g`.
fn mtv_add(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += gi * a;
        }
    }
}

/// `dw += g xᵀ`.
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(dw.chunks_exact_mut(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (d, xv) in row.iter_mut().zip(x) {
            *d += gi * xv;
        }
    }
}

fn add_edge_column(out: &mut [f64], w_edge: &[f64], k: usize, scale: f64) {
    let e = BondOrder::ALL.len();
    for (o, row) in out.iter_mut().zip(w_edge.chunks_exact(e)) {
        *o += scale * row[k];
    }
}

fn edge_column_grad(dw_edge: &mut [f64], k: usize, g: &[f64], scale: f64) {
    let e = BondOrder::ALL.len();
    for (row, gi) in dw_edge.chunks_exact_mut(e).zip(g) {
        row[k] += scale * gi;
    }
}

fn head_forward(hb: &HeadBlocks, p: &[f64], pooled: &[f64]) -> (f64, Vec<f64>) {
    let mut hidden = hb.b1.of(p).to_vec();
    mv_add(&mut hidden, hb.w1.of(p), pooled);
    let w2 = hb.w2.of(p);
    let out = hb.b2.of(p)[0] + hidden.iter().zip(w2).map(|(z, w)| relu(*z) * w).sum::<f64>();
    (out, hidden)
}

fn head_backward(
    hb: &HeadBlocks,
    p: &[f64],
    pooled: &[f64],
    hidden: &[f64],
    g_out: f64,
    grad: &mut [f64],
    g_pool: &mut [f64],
) {
    if g_out == 0.0 {
        return;
    }
    hb.b2.of_mut(grad)[0] += g_out;
    let w2 = hb.w2.of(p);
    let g_w2 = hb.w2.of_mut(grad);
    let mut g_hidden = vec![0.0; hidden.len()];
    for k in 0..hidden.len() {
        g_w2[k] += g_out * relu(hidden[k]);
        if hidden[k] > 0.0 {
            g_hidden[k] = g_out * w2[k];
        }
    }
    for (b, gh) in hb.b1.of_mut(grad).iter_mut().zip(&g_hidden) {
        *b += gh;
    }
    outer_add(hb.w1.of_mut(grad), &g_hidden, pooled);
    mtv_add(g_pool, hb.w1.of(p), &g_hidden);
}

fn gcn_forward(
    g: &PreparedGraph,
    x: &[f64],
    d: usize,
    h: usize,
    w: &[f64],
    w_edge: &[f64],
    b: &[f64],
) -> (Vec<f64>, InnerCache) {
    let n = g.node_count();
    let mut t = vec![0.0; n * h];
    for i in 0..n {
        mv_add(&mut t[i * h..(i + 1) * h], w, &x[i * d..(i + 1) * d]);
    }
    let mut pre = vec![0.0; n * h];
    let mut out = vec![0.0; n * h];
    let mut m = vec![0.0; h];
    for i in 0..n {
        m.copy_from_slice(&t[i * h..(i + 1) * h]);
        for &(j, k) in &g.neighbors[i] {
            for (mv, tv) in m.iter_mut().zip(&t[j * h..(j + 1) * h]) {
                *mv += tv;
            }
            add_edge_column(&mut m, w_edge, k, 1.0);
        }
        let scale = 1.0 / (g.neighbors[i].len() as f64 + 1.0);
        for c in 0..h {
            let a = m[c] * scale + b[c];
            pre[i * h + c] = a;
            out[i * h + c] = relu(a);
        }
    }
    (out, InnerCache::Gcn { pre })
}

#[allow(clippy::too_many_arguments)]
fn gcn_backward(
    g: &PreparedGraph,
    x: &[f64],
    d: usize,
    h: usize,
    pre: &[f64],
    g_out: &[f64],
    p: &[f64],
    grad: &mut [f64],
    w: Block,
    w_edge: Block,
    b: Block,
) -> Vec<f64> {
    let n = g.node_count();
    let mut g_t = vec![0.0; n * h];
    let mut g_m = vec![0.0; h];
    for i in 0..n {
        let scale = 1.0 / (g.neighbors[i].len() as f64 + 1.0);
        let gb = b.of_mut(grad);
        for c in 0..h {
            let ga = if pre[i * h + c] > 0.0 { g_out[i * h + c] } else { 0.0 };
            gb[c] += ga;
            g_m[c] = ga * scale;
        }
        for (gt, gm) in g_t[i * h..(i + 1) * h].iter_mut().zip(&g_m) {
            *gt += gm;
        }
        for &(j, k) in &g.neighbors[i] {
            for (gt, gm) in g_t[j * h..(j + 1) * h].iter_mut().zip(&g_m) {
                *gt += gm;
            }
            edge_column_grad(w_edge.of_mut(grad), k, &g_m, 1.0);
        }
    }
    let mut g_x = vec![0.0; n * d];
    for i in 0..n {
        let gt = &g_t[i * h..(i + 1) * h];
        outer_add(w.of_mut(grad), gt, &x[i * d..(i + 1) * d]);
        mtv_add(&mut g_x[i * d..(i + 1) * d], w.of(p), gt);
    }
    g_x
}

fn gin_forward(
    g: &PreparedGraph,
    x: &[f64],
    d: usize,
    h: usize,
    w_edge: &[f64],
    (w1, b1): (&[f64], &[f64]),
    (w2, b2): (&[f64], &[f64]),
) -> (Vec<f64>, InnerCache) {
    let n = g.node_count();
    let mut s = x.to_vec();
    for i in 0..n {
        for &(j, k) in &g.neighbors[i] {
            let (si, xj) = (i * d, j * d);
            for c in 0..d {
                s[si + c] += x[xj + c];
            }
            add_edge_column(&mut s[si..si + d], w_edge, k, 1.0);
        }
    }
    let mut z1 = vec![0.0; n * h];
    let mut z2 = vec![0.0; n * h];
    let mut out = vec![0.0; n * h];
    let mut r1 = vec![0.0; h];
    for i in 0..n {
        let z1i = &mut z1[i * h..(i + 1) * h];
        z1i.copy_from_slice(b1);
        mv_add(z1i, w1, &s[i * d..(i + 1) * d]);
        for (r, z) in r1.iter_mut().zip(z1i.iter()) {
            *r = relu(*z);
        }
        let z2i = &mut z2[i * h..(i + 1) * h];
        z2i.copy_from_slice(b2);
        mv_add(z2i, w2, &r1);
        for (o, z) in out[i * h..(i + 1) * h].iter_mut().zip(z2i.iter()) {
            *o = relu(*z);
        }
    }
    (out, InnerCache::Gin { s, z1, z2 })
}

#[allow(clippy::too_many_arguments)]
fn gin_backward(
    g: &PreparedGraph,
    d: usize,
    h: usize,
    (s, z1, z2): (&[f64], &[f64], &[f64]),
    g_out: &[f64],
    p: &[f64],
    grad: &mut [f64],
    [w_edge, w1, b1, w2, b2]: [Block; 5],
) -> Vec<f64> {
    let n = g.node_count();
    let mut g_s = vec![0.0; n * d];
    let mut g_z2 = vec![0.0; h];
    let mut g_r1 = vec![0.0; h];
    let mut r1 = vec![0.0; h];
    for i in 0..n {
        for c in 0..h {
            g_z2[c] = if z2[i * h + c] > 0.0 { g_out[i * h + c] } else { 0.0 };
            r1[c] = relu(z1[i * h + c]);
        }
        for (gb, gz) in b2.of_mut(grad).iter_mut().zip(&g_z2) {
            *gb += gz;
        }
        outer_add(w2.of_mut(grad), &g_z2, &r1);
        g_r1.iter_mut().for_each(|v| *v = 0.0);
        mtv_add(&mut g_r1, w2.of(p), &g_z2);
        for c in 0..h {
            if z1[i * h + c] <= 0.0 {
                g_r1[c] = 0.0;
            }
        }
        for (gb, gz) in b1.of_mut(grad).iter_mut().zip(&g_r1) {
            *gb += gz;
        }
        outer_add(w1.of_mut(grad), &g_r1, &s[i * d..(i + 1) * d]);
        mtv_add(&mut g_s[i * d..(i + 1) * d], w1.of(p), &g_r1);
    }
    let mut g_x = g_s.clone();
    for i in 0..n {
        let gsi = &g_s[i * d..(i + 1) * d];
        for &(j, k) in &g.neighbors[i] {
            for (gx, gs) in g_x[j * d..(j + 1) * d].iter_mut().zip(gsi) {
                *gx += gs;
            }
            edge_column_grad(w_edge.of_mut(grad), k, gsi, 1.0);
        }
    }
    g_x
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Candidate list of node `i` for attention: itself (no edge) then its neighbors.
fn candidates(g: &PreparedGraph, i: usize) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
    std::iter::once((i, None)).chain(g.neighbors[i].iter().map(|&(j, k)| (j, Some(k))))
}

#[allow(clippy::too_many_arguments)]
fn gat_forward(
    g: &PreparedGraph,
    x: &[f64],
    d: usize,
    h: usize,
    (w_src, w_dst): (&[f64], &[f64]),
    att: &[f64],
    w_edge: &[f64],
    b: &[f64],
) -> (Vec<f64>, InnerCache) {
    let n = g.node_count();
    let mut ps = vec![0.0; n * h];
    let mut q = vec![0.0; n * h];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        mv_add(&mut ps[i * h..(i + 1) * h], w_src, xi);
        mv_add(&mut q[i * h..(i + 1) * h], w_dst, xi);
    }
    let mut v = Vec::new();
    let mut alpha = Vec::new();
    let mut z = vec![0.0; n * h];
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        let start = alpha.len();
        let mut scores = Vec::new();
        for (c, _) in candidates(g, i) {
            let mut e = 0.0;
            for k in 0..h {
                let vk = ps[i * h + k] + q[c * h + k];
                v.push(vk);
                e += att[k] * leaky(vk);
            }
            scores.push(e);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        alpha.extend(exps.iter().map(|e| e / total));
        let zi = &mut z[i * h..(i + 1) * h];
        zi.copy_from_slice(b);
        for (idx, (c, edge)) in candidates(g, i).enumerate() {
            let a = alpha[start + idx];
            for (zk, qk) in zi.iter_mut().zip(&q[c * h..(c + 1) * h]) {
                *zk += a * qk;
            }
            if let Some(k) = edge {
                add_edge_column(zi, w_edge, k, a);
            }
        }
        for (o, zk) in out[i * h..(i + 1) * h].iter_mut().zip(zi.iter()) {
            *o = relu(*zk);
        }
    }
    (out, InnerCache::Gat { q, v, alpha, z })
}

#[allow(clippy::too_many_arguments)]
fn gat_backward(
    g: &PreparedGraph,
    x: &[f64],
    d: usize,
    h: usize,
    (q, v, alpha, z): (&[f64], &[f64], &[f64], &[f64]),
    g_out: &[f64],
    p: &[f64],
    grad: &mut [f64],
    [w_src, w_dst, att, w_edge, b]: [Block; 5],
) -> Vec<f64> {
    let n = g.node_count();
    let att_p = att.of(p);
    let w_edge_p = w_edge.of(p);
    let mut g_p = vec![0.0; n * h];
    let mut g_q = vec![0.0; n * h];
    let mut g_z = vec![0.0; h];
    let mut msg = vec![0.0; h];
    let mut pair = 0;
    for i in 0..n {
        for c in 0..h {
            g_z[c] = if z[i * h + c] > 0.0 { g_out[i * h + c] } else { 0.0 };
        }
        for (gb, gz) in b.of_mut(grad).iter_mut().zip(&g_z) {
            *gb += gz;
        }
        let cands: Vec<(usize, Option<usize>)> = candidates(g, i).collect();
        let mut g_alpha = Vec::with_capacity(cands.len());
        for (idx, &(c, edge)) in cands.iter().enumerate() {
            let a = alpha[pair + idx];
            msg.copy_from_slice(&q[c * h..(c + 1) * h]);
            if let Some(k) = edge {
                add_edge_column(&mut msg, w_edge_p, k, 1.0);
                edge_column_grad(w_edge.of_mut(grad), k, &g_z, a);
            }
            g_alpha.push(g_z.iter().zip(&msg).map(|(a, b)| a * b).sum::<f64>());
            for (gq, gz) in g_q[c * h..(c + 1) * h].iter_mut().zip(&g_z) {
                *gq += a * gz;
            }
        }
        let weighted: f64 = g_alpha
            .iter()
            .enumerate()
            .map(|(idx, ga)| alpha[pair + idx] * ga)
            .sum();
        for (idx, &(c, _)) in cands.iter().enumerate() {
            let g_e = alpha[pair + idx] * (g_alpha[idx] - weighted);
            let vs = &v[(pair + idx) * h..(pair + idx + 1) * h];
            let g_att = att.of_mut(grad);
            for k in 0..h {
                g_att[k] += g_e * leaky(vs[k]);
                let slope = if vs[k] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                let gv = g_e * att_p[k] * slope;
                g_p[i * h + k] += gv;
                g_q[c * h + k] += gv;
            }
        }
        pair += cands.len();
    }
    let mut g_x = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let (gp, gq) = (&g_p[i * h..(i + 1) * h], &g_q[i * h..(i + 1) * h]);
        outer_add(w_src.of_mut(grad), gp, xi);
        outer_add(w_dst.of_mut(grad), gq, xi);
        let gx = &mut g_x[i * d..(i + 1) * d];
        mtv_add(gx, w_src.of(p), gp);
        mtv_add(gx, w_dst.of(p), gq);
    }
    g_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(arch: Architecture, var: bool) -> RegressorConfig {
        RegressorConfig {
            architecture: arch,
            layers: 2,
            hidden_dim: 5,
            variance_head: var,
        }
    }

    #[test]
    fn layout_lengths() {
        let h = 5;
        let e = 3;
        let d = INPUT_DIM;
        let head = h * h + h + h + 1;
        let gcn = (h * d + h * e + h) + (h * h + h * e + h) + head;
        assert_eq!(ParamLayout::new(&cfg(Architecture::Gcn, false)).len(), gcn);
        let gin = (d * e + h * d + h + h * h + h) + (h * e + h * h + h + h * h + h) + head;
        assert_eq!(ParamLayout::new(&cfg(Architecture::Gin, false)).len(), gin);
        let gat = (2 * h * d + h + h * e + h) + (2 * h * h + h + h * e + h) + head;
        assert_eq!(ParamLayout::new(&cfg(Architecture::Gatv2lite, false)).len(), gat);
        assert_eq!(ParamLayout::new(&cfg(Architecture::Gin, true)).len(), gin + head);
    }

    #[test]
    fn zero_params_give_head_bias() {
        for arch in Architecture::ALL {
            let mut r = Regressor::zeros(cfg(arch, true)).unwrap();
            let b = r.layout().block("head_b2").unwrap();
            r.params_mut()[b.offset] = 0.75;
            for s in ["C", "CCO", "C1=CC=CC=C1"] {
                let pred = r.predict(&parse_smiles(s).unwrap());
                assert_eq!(pred.y_hat, 0.75);
                assert_eq!(pred.embedding, vec![0.0; 5]);
                assert_eq!(pred.sigma2, Some(2f64.ln() + SIGMA2_FLOOR));
            }
        }
    }

    #[test]
    fn relabeling_gives_identical_output() {
        let g = parse_smiles("CC(=O)NC1=CC=CC=C1F").unwrap();
        let n = g.atom_count();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let h = g.permuted(&perm);
        for arch in Architecture::ALL {
            let r = Regressor::init(cfg(arch, true), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(r.predict(&g), r.predict(&h));
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let c = cfg(Architecture::Gcn, false);
        assert!(matches!(
            Regressor::from_params(c, vec![0.0; 3]),
            Err(ModelError::LayoutMismatch { .. })
        ));
        let n = ParamLayout::new(&c).len();
        let mut p = vec![0.0; n];
        p[0] = f64::NAN;
        assert_eq!(Regressor::from_params(c, p), Err(ModelError::NonFiniteParams));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for arch in Architecture::ALL {
            let r = Regressor::init(cfg(arch, true), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let back = Regressor::from_json(&r.to_json()).unwrap();
            assert_eq!(r.config(), back.config());
            let a: Vec<u64> = r.params().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.params().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert!(Regressor::from_json("{}").is_err());
    }

    #[test]
    fn architecture_names_parse() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("gat".parse::<Architecture>().is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
    }
}
