//! Neural network layers on graphs, built on the autodiff tape: the
//! recurrent message-passing transition with its readout heads, first-order
//! graph convolution, and neighborhood-sampling-style aggregation layers
//! (mean and max-pool).
//!
//! Layer functions append operations to a caller-owned [`Tape`] and return
//! tensor handles; parameters live in a [`ParamStore`] and are bound onto
//! the tape once per forward pass.

use crate::graph::{Graph, GraphError};
use crate::sparse::CsrMatrix;
use crate::tape::{Shape, Tape, TapeError, TensorId};
use crate::Activation;
use rand::Rng;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("parameter {name} already exists")]
    DuplicateParam { name: String },
    #[error("unknown parameter {name}")]
    UnknownParam { name: String },
    #[error("{what}: got {got}, expected {expected}")]
    BadDimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("graph has no vertex features and no embedding parameter was provided")]
    MissingVertexFeatures,
    #[error("sparse input requires a precomputed neighbor-mean feature matrix")]
    MissingNeighborMean,
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type Result<T> = std::result::Result<T, LayerError>;

// ----------------------------------------------------------------------
// Parameters
// ----------------------------------------------------------------------

/// Named, insertion-ordered collection of trainable arrays. Insertion
/// order is the canonical iteration order everywhere (binding, gradient
/// collection, optimizer state), which keeps training deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Shape>,
    data: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, name: &str, shape: Shape, data: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(LayerError::DuplicateParam {
                name: name.to_string(),
            });
        }
        debug_assert_eq!(data.len(), shape.len());
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.data.push(data);
        Ok(())
    }

    /// Glorot/Xavier uniform initialization: U(-s, s) with
    /// `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<()> {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 * s - s)
            .collect();
        self.add(name, Shape::new(rows, cols), data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.add(name, Shape::new(rows, cols), vec![0.0; rows * cols])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn shape(&self, name: &str) -> Result<Shape> {
        self.index
            .get(name)
            .map(|&i| self.shapes[i])
            .ok_or_else(|| LayerError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&i| self.data[i].as_slice())
            .ok_or_else(|| LayerError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| LayerError::UnknownParam {
                name: name.to_string(),
            })?;
        if values.len() != self.shapes[i].len() {
            return Err(LayerError::BadDimension {
                what: "parameter value length",
                got: values.len(),
                expected: self.shapes[i].len(),
            });
        }
        self.data[i] = values;
        Ok(())
    }

    /// Iterates `(name, shape, values)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Shape, &[f64])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.data)
            .map(|((n, s), d)| (n.as_str(), *s, d.as_slice()))
    }

    /// Creates gradient-tracking leaves for every parameter on a fresh
    /// forward tape, in insertion order.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut ids = Vec::with_capacity(self.names.len());
        for ((name, shape), data) in self.names.iter().zip(&self.shapes).zip(&self.data) {
            let id = tape.leaf(*shape, data.clone(), true)?;
            ids.push((name.clone(), id));
        }
        Ok(BoundParams { ids })
    }

    /// In-place update `p -= step[i]` for every parameter, `step` aligned
    /// with insertion order.
    pub fn apply_steps(&mut self, steps: &[Vec<f64>]) -> Result<()> {
        if steps.len() != self.data.len() {
            return Err(LayerError::BadDimension {
                what: "step count",
                got: steps.len(),
                expected: self.data.len(),
            });
        }
        for (p, s) in self.data.iter_mut().zip(steps) {
            for (pv, sv) in p.iter_mut().zip(s) {
                *pv -= sv;
            }
        }
        Ok(())
    }
}

/// Parameter tensors bound onto a specific tape for one forward pass.
pub struct BoundParams {
    ids: Vec<(String, TensorId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| LayerError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }
}

/// Accumulated gradients aligned with a [`ParamStore`]'s insertion order.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamStore) -> Self {
        GradStore {
            grads: params.iter().map(|(_, s, _)| vec![0.0; s.len()]).collect(),
        }
    }

    /// Adds the tape's gradients for every bound parameter that received
    /// one (parameters not touching the loss contribute nothing).
    pub fn accumulate(&mut self, tape: &Tape, bound: &BoundParams) {
        for (slot, (_, id)) in self.grads.iter_mut().zip(&bound.ids) {
            if let Ok(g) = tape.grad(*id) {
                for (o, &v) in slot.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

// ----------------------------------------------------------------------
// Shared helpers
// ----------------------------------------------------------------------

/// Input to a layer: either a dense tensor already on the tape or a
/// constant sparse matrix (used for high-dimensional first-layer features).
pub enum FeatureInput<'a> {
    Dense(TensorId),
    Sparse(&'a Arc<CsrMatrix>),
}

impl FeatureInput<'_> {
    fn cols(&self, tape: &Tape) -> usize {
        match self {
            FeatureInput::Dense(t) => tape.shape(*t).cols,
            FeatureInput::Sparse(m) => m.cols(),
        }
    }

    fn rows(&self, tape: &Tape) -> usize {
        match self {
            FeatureInput::Dense(t) => tape.shape(*t).rows,
            FeatureInput::Sparse(m) => m.rows(),
        }
    }

    /// `input * w`, dispatching on density. The sparse route multiplies the
    /// constant matrix by the (dense) weight without densifying the input.
    fn times_weight(&self, tape: &mut Tape, w: TensorId) -> Result<TensorId> {
        Ok(match self {
            FeatureInput::Dense(t) => tape.matmul(*t, w)?,
            FeatureInput::Sparse(m) => tape.sparse_matmul(m, w)?,
        })
    }
}

pub fn apply_activation(tape: &mut Tape, t: TensorId, act: Activation) -> Result<TensorId> {
    Ok(match act {
        Activation::Identity => t,
        Activation::Relu => tape.relu(t)?,
        Activation::Sigmoid => tape.sigmoid(t)?,
        Activation::Tanh => tape.tanh(t)?,
    })
}

/// Row-normalized neighborhood averaging operator: row i holds 1/deg(i) at
/// each neighbor of i, and is all zero for isolated vertices.
pub fn mean_aggregation_matrix(g: &Graph) -> CsrMatrix {
    let n = g.num_vertices();
    let mut triplets = Vec::new();
    for i in 0..n {
        let nb = g.neighbors(i).expect("index in range");
        if nb.is_empty() {
            continue;
        }
        let w = 1.0 / nb.len() as f64;
        for &j in nb {
            triplets.push((i, j, w));
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).expect("triplets in range")
}

// ----------------------------------------------------------------------
// Recurrent message-passing network
// ----------------------------------------------------------------------

/// Per-vertex input representation: the graph's feature rows if it has
/// them, otherwise one shared learned embedding row broadcast to every
/// vertex (so featureless graphs still get trainable inputs).
fn vertex_inputs(tape: &mut Tape, g: &Graph, embed: Option<TensorId>) -> Result<TensorId> {
    let n = g.num_vertices();
    match g.vertex_features() {
        Some(f) => {
            let c = tape.constant(Shape::new(n, f.cols()), f.data().to_vec())?;
            Ok(c)
        }
        None => {
            let e = embed.ok_or(LayerError::MissingVertexFeatures)?;
            let idx = vec![0usize; n];
            Ok(tape.gather_rows(e, &idx)?)
        }
    }
}

/// One synchronous state transition: every vertex sums, over its
/// neighbors, a learned function of (its own features, the connecting
/// edge's features, the neighbor's features, the neighbor's state), i.e.
///
/// `h_i <- sum_{j in ne(i)} tanh(W [f_i | f_e(i,j) | f_j | h_j] + b)`
///
/// Vertices without neighbors get the zero state.
pub fn rgnn_transition(
    tape: &mut Tape,
    g: &Graph,
    h_prev: TensorId,
    w: TensorId,
    b: TensorId,
    embed: Option<TensorId>,
) -> Result<TensorId> {
    let n = g.num_vertices();
    let hidden = tape.shape(h_prev).cols;
    if tape.shape(h_prev).rows != n {
        return Err(LayerError::BadDimension {
            what: "state rows",
            got: tape.shape(h_prev).rows,
            expected: n,
        });
    }
    let feats = vertex_inputs(tape, g, embed)?;
    let fv = tape.shape(feats).cols;
    let fe = g.edge_features().map_or(0, |f| f.cols());
    let expect_in = 2 * fv + fe + hidden;
    if tape.shape(w).rows != expect_in || tape.shape(w).cols != hidden {
        return Err(LayerError::BadDimension {
            what: "transition weight rows",
            got: tape.shape(w).rows,
            expected: expect_in,
        });
    }

    let (dst, src, eidx) = g.message_pairs();
    if dst.is_empty() {
        // No edges anywhere: every state is the empty sum.
        return Ok(tape.constant(Shape::new(n, hidden), vec![0.0; n * hidden])?);
    }

    let f_dst = tape.gather_rows(feats, &dst)?;
    let f_src = tape.gather_rows(feats, &src)?;
    let h_src = tape.gather_rows(h_prev, &src)?;
    let mut parts = vec![f_dst];
    if let Some(ef) = g.edge_features() {
        let ef_const = tape.constant(Shape::new(ef.rows(), ef.cols()), ef.data().to_vec())?;
        parts.push(tape.gather_rows(ef_const, &eidx)?);
    }
    parts.push(f_src);
    parts.push(h_src);
    let stacked = tape.concat_cols(&parts)?;
    let lin = tape.matmul(stacked, w)?;
    let biased = tape.add_row_bias(lin, b)?;
    let messages = tape.tanh(biased)?;
    Ok(tape.scatter_add_rows(messages, &dst, n)?)
}

/// Outcome of iterating the transition to (approximate) convergence.
pub struct RgnnRun {
    pub h: TensorId,
    pub steps: usize,
    pub converged: bool,
    /// Max-abs state change of the last step taken.
    pub last_delta: f64,
}

/// Iterates the transition from the zero state. With `eps = None` it runs
/// exactly `max_steps`; otherwise it stops early once the max-abs state
/// change drops below `eps`, and `converged` reports whether that happened
/// within the budget. When the map is a contraction (small weights) this
/// converges by the fixed-point argument; `converged = false` after
/// `max_steps` is the caller's signal that it may not be one.
#[allow(clippy::too_many_arguments)]
pub fn rgnn_run(
    tape: &mut Tape,
    g: &Graph,
    w: TensorId,
    b: TensorId,
    embed: Option<TensorId>,
    hidden: usize,
    max_steps: usize,
    eps: Option<f64>,
) -> Result<RgnnRun> {
    let n = g.num_vertices();
    let mut h = tape.constant(Shape::new(n, hidden), vec![0.0; n * hidden])?;
    let mut steps = 0;
    let mut last_delta = f64::INFINITY;
    while steps < max_steps {
        let h_next = rgnn_transition(tape, g, h, w, b, embed)?;
        last_delta = tape
            .value(h)
            .iter()
            .zip(tape.value(h_next))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        h = h_next;
        steps += 1;
        if let Some(e) = eps {
            if last_delta < e {
                return Ok(RgnnRun {
                    h,
                    steps,
                    converged: true,
                    last_delta,
                });
            }
        }
    }
    let converged = eps.is_none_or(|e| last_delta < e);
    Ok(RgnnRun {
        h,
        steps,
        converged,
        last_delta,
    })
}

/// Vertex-level readout: `[f_i | h_i] W + b`, one output row per vertex.
pub fn output_vertex(
    tape: &mut Tape,
    g: &Graph,
    h: TensorId,
    w: TensorId,
    b: TensorId,
    embed: Option<TensorId>,
) -> Result<TensorId> {
    let feats = vertex_inputs(tape, g, embed)?;
    let joined = tape.concat_cols(&[feats, h])?;
    let lin = tape.matmul(joined, w)?;
    Ok(tape.add_row_bias(lin, b)?)
}

/// Edge-level readout over canonical edges:
/// `[f_e | f_u | h_u | f_v | h_v] W + b`, one output row per edge.
pub fn output_edge(
    tape: &mut Tape,
    g: &Graph,
    h: TensorId,
    w: TensorId,
    b: TensorId,
    embed: Option<TensorId>,
) -> Result<TensorId> {
    if g.num_edges() == 0 {
        return Err(LayerError::BadDimension {
            what: "edge count",
            got: 0,
            expected: 1,
        });
    }
    let feats = vertex_inputs(tape, g, embed)?;
    let us: Vec<usize> = g.edges().iter().map(|&(u, _)| u).collect();
    let vs: Vec<usize> = g.edges().iter().map(|&(_, v)| v).collect();
    let f_u = tape.gather_rows(feats, &us)?;
    let h_u = tape.gather_rows(h, &us)?;
    let f_v = tape.gather_rows(feats, &vs)?;
    let h_v = tape.gather_rows(h, &vs)?;
    let mut parts = Vec::new();
    if let Some(ef) = g.edge_features() {
        parts.push(tape.constant(Shape::new(ef.rows(), ef.cols()), ef.data().to_vec())?);
    }
    parts.extend([f_u, h_u, f_v, h_v]);
    let joined = tape.concat_cols(&parts)?;
    let lin = tape.matmul(joined, w)?;
    Ok(tape.add_row_bias(lin, b)?)
}

/// Graph-level readout: mean of the vertex states followed by an affine
/// map, producing a single output row.
pub fn output_graph(
    tape: &mut Tape,
    g: &Graph,
    h: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let n = g.num_vertices();
    if n == 0 {
        return Err(LayerError::BadDimension {
            what: "vertex count",
            got: 0,
            expected: 1,
        });
    }
    let ones = tape.constant(Shape::new(1, n), vec![1.0 / n as f64; n])?;
    let mean = tape.matmul(ones, h)?;
    let lin = tape.matmul(mean, w)?;
    Ok(tape.add_row_bias(lin, b)?)
}

// ----------------------------------------------------------------------
// Convolution-style layers
// ----------------------------------------------------------------------

/// First-order graph convolution: `act(Anorm (X W))` where `Anorm` is the
/// renormalized adjacency from
/// [`gcn_norm_adjacency`](crate::spectral::gcn_norm_adjacency).
pub fn gcn_layer(
    tape: &mut Tape,
    anorm: &Arc<CsrMatrix>,
    input: FeatureInput,
    w: TensorId,
    act: Activation,
) -> Result<TensorId> {
    let in_cols = input.cols(tape);
    if tape.shape(w).rows != in_cols {
        return Err(LayerError::BadDimension {
            what: "gcn weight rows",
            got: tape.shape(w).rows,
            expected: in_cols,
        });
    }
    if anorm.cols() != input.rows(tape) {
        return Err(LayerError::BadDimension {
            what: "gcn adjacency columns",
            got: anorm.cols(),
            expected: input.rows(tape),
        });
    }
    let xw = input.times_weight(tape, w)?;
    let propagated = tape.sparse_matmul(anorm, xw)?;
    apply_activation(tape, propagated, act)
}

/// Mean-aggregator layer: `act(h_i W_self + mean_{j in ne(i)}(x_j) W_neigh)`.
///
/// `mean_op` is the operator from [`mean_aggregation_matrix`]. For sparse
/// inputs the caller passes the precomputed neighbor-mean feature matrix
/// (mean_op * X) so the high-dimensional features are never densified.
pub fn sage_mean_layer(
    tape: &mut Tape,
    mean_op: &Arc<CsrMatrix>,
    input: FeatureInput,
    neighbor_mean_x: Option<&Arc<CsrMatrix>>,
    w_self: TensorId,
    w_neigh: TensorId,
    act: Activation,
) -> Result<TensorId> {
    let self_part = input.times_weight(tape, w_self)?;
    let neigh_part = match &input {
        FeatureInput::Dense(h) => {
            let averaged = tape.sparse_matmul(mean_op, *h)?;
            tape.matmul(averaged, w_neigh)?
        }
        FeatureInput::Sparse(_) => {
            let nm = neighbor_mean_x.ok_or(LayerError::MissingNeighborMean)?;
            tape.sparse_matmul(nm, w_neigh)?
        }
    };
    let combined = tape.add(self_part, neigh_part)?;
    apply_activation(tape, combined, act)
}

/// Max-pool aggregator layer: each neighbor's features go through a
/// one-layer perceptron, the results are max-pooled elementwise over the
/// neighborhood, and the pooled vector joins the vertex's own
/// contribution:
///
/// `act(h_i W_self + maxpool_{j in ne(i)} relu(x_j W_pool + b_pool) W_neigh)`
///
/// Vertices without neighbors pool to the zero vector.
#[allow(clippy::too_many_arguments)]
pub fn sage_pool_layer(
    tape: &mut Tape,
    g: &Graph,
    input: FeatureInput,
    w_pool: TensorId,
    b_pool: TensorId,
    w_self: TensorId,
    w_neigh: TensorId,
    act: Activation,
) -> Result<TensorId> {
    let n = g.num_vertices();
    if input.rows(tape) != n {
        return Err(LayerError::BadDimension {
            what: "input rows",
            got: input.rows(tape),
            expected: n,
        });
    }
    let self_part = input.times_weight(tape, w_self)?;

    let pool_dim = tape.shape(w_pool).cols;
    let pre = input.times_weight(tape, w_pool)?;
    let biased = tape.add_row_bias(pre, b_pool)?;
    let pooled_feats = tape.relu(biased)?;

    let (dst, src, _) = g.message_pairs();
    let agg = if dst.is_empty() {
        tape.constant(Shape::new(n, pool_dim), vec![0.0; n * pool_dim])?
    } else {
        let gathered = tape.gather_rows(pooled_feats, &src)?;
        tape.scatter_max_rows(gathered, &dst, n)?
    };
    let neigh_part = tape.matmul(agg, w_neigh)?;
    let combined = tape.add(self_part, neigh_part)?;
    apply_activation(tape, combined, act)
}
