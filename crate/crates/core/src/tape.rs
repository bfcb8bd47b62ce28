//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation appends a node holding its already-computed value and
//! enough saved state to run the chain rule backwards. Tensors are
//! identified by index into the tape, so graphs are built imperatively and
//! freed all at once when the tape drops.
//!
//! Gradient semantics: [`Tape::backward`] accumulates into persistent
//! per-tensor gradient buffers, so calling it twice without
//! [`Tape::zero_grads`] doubles every gradient (useful for summing losses
//! over a batch of graphs).

use crate::dense::{matmul_a_bt, matmul_at_b, matmul_into};
use crate::sparse::{sorted_sum, CsrMatrix};
use std::sync::Arc;
use thiserror::Error;

/// Inputs below this magnitude are clamped before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("value length {len} does not match shape {rows}x{cols}")]
    ValueLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite input value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("row index {index} out of range for {rows} rows in {op}")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("zero-sized tensors are not supported ({rows}x{cols})")]
    ZeroSized { rows: usize, cols: usize },
    #[error("{op} needs at least one input")]
    NoInputs { op: &'static str },
    #[error("invalid clamp bounds: lo {lo} > hi {hi}")]
    BadClampBounds { lo: f64, hi: f64 },
    #[error("gradient requested for tensor without requires_grad")]
    NoGradient,
}

type Result<T> = std::result::Result<T, TapeError>;

/// (rows, cols) of a tape tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// A differentiable operation with opaque saved state, used to extend the
/// engine without growing the core op enum (e.g. fused losses that would
/// otherwise materialize huge intermediates).
pub trait CustomOp: std::fmt::Debug {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, in input order; `None` for
    /// inputs that need no gradient.
    fn backward(
        &self,
        inputs: &[(&[f64], Shape)],
        output: &[f64],
        out_grad: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    /// Constant sparse matrix times dense tensor.
    SparseMatmul {
        m: Arc<CsrMatrix>,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    /// Broadcasts a 1 x c bias over the rows of a.
    AddRowBias {
        a: TensorId,
        bias: TensorId,
    },
    ElemMul {
        a: TensorId,
        b: TensorId,
    },
    /// mul * x + add, elementwise with scalar constants (only the slope is
    /// needed for the backward pass).
    Affine {
        a: TensorId,
        mul: f64,
    },
    RowSum {
        a: TensorId,
    },
    RowMean {
        a: TensorId,
    },
    RowMax {
        a: TensorId,
        argmax: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<TensorId>,
    },
    Sigmoid {
        a: TensorId,
    },
    Relu {
        a: TensorId,
    },
    Tanh {
        a: TensorId,
    },
    Exp {
        a: TensorId,
    },
    /// ln(max(x, LOG_CLAMP)).
    Log {
        a: TensorId,
    },
    Clamp {
        a: TensorId,
        lo: f64,
        hi: f64,
    },
    SoftmaxRows {
        a: TensorId,
    },
    /// out[k] = a[idx[k]] (row gather; indices may repeat).
    GatherRows {
        a: TensorId,
        idx: Vec<usize>,
    },
    /// out[idx[k]] += a[k] with value-sorted accumulation per cell.
    ScatterAddRows {
        a: TensorId,
        idx: Vec<usize>,
    },
    /// out[r] = max over {a[k] : idx[k] = r}; rows with no contributor are
    /// 0. winners[r*c+cc] is the winning source row or usize::MAX.
    ScatterMaxRows {
        a: TensorId,
        winners: Vec<usize>,
    },
    Transpose {
        a: TensorId,
    },
    SumAll {
        a: TensorId,
    },
    MeanAll {
        a: TensorId,
    },
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<TensorId>,
    },
}

struct Node {
    op: Op,
    shape: Shape,
    requires_grad: bool,
}

/// Arena of tensors plus the recorded operations connecting them.
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(value.len(), shape.len());
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
        });
        self.values.push(value);
        self.grads.push(Vec::new());
        TensorId(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, shape: Shape, data: Vec<f64>, requires_grad: bool) -> Result<TensorId> {
        if shape.is_empty() {
            return Err(TapeError::ZeroSized {
                rows: shape.rows,
                cols: shape.cols,
            });
        }
        if data.len() != shape.len() {
            return Err(TapeError::ValueLength {
                rows: shape.rows,
                cols: shape.cols,
                len: data.len(),
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TapeError::NonFinite { index: i, value: v });
            }
        }
        Ok(self.push(Op::Leaf, shape, data, requires_grad))
    }

    pub fn constant(&mut self, shape: Shape, data: Vec<f64>) -> Result<TensorId> {
        self.leaf(shape, data, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Result<TensorId> {
        self.leaf(Shape::scalar(), vec![v], false)
    }

    pub fn shape(&self, t: TensorId) -> Shape {
        self.nodes[t.0].shape
    }

    pub fn value(&self, t: TensorId) -> &[f64] {
        &self.values[t.0]
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Accumulated gradient of the last `backward` calls, or an error if the
    /// tensor does not track gradients or none has been computed yet.
    pub fn grad(&self, t: TensorId) -> Result<&[f64]> {
        if !self.nodes[t.0].requires_grad {
            return Err(TapeError::NoGradient);
        }
        if self.grads[t.0].is_empty() {
            return Err(TapeError::NoGradient);
        }
        Ok(&self.grads[t.0])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.clear();
        }
    }

    fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                details: format!("{}x{} * {}x{}", sa.rows, sa.cols, sb.rows, sb.cols),
            });
        }
        let shape = Shape::new(sa.rows, sb.cols);
        let mut out = vec![0.0; shape.len()];
        matmul_into(
            &self.values[a.0],
            sa.rows,
            sa.cols,
            &self.values[b.0],
            sb.cols,
            &mut out,
        );
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Op::Matmul { a, b }, shape, out, rg))
    }

    /// Multiplies a constant sparse matrix by a dense tape tensor.
    pub fn sparse_matmul(&mut self, m: &Arc<CsrMatrix>, b: TensorId) -> Result<TensorId> {
        let sb = self.shape(b);
        if m.cols() != sb.rows {
            return Err(TapeError::ShapeMismatch {
                op: "sparse_matmul",
                details: format!("{}x{} * {}x{}", m.rows(), m.cols(), sb.rows, sb.cols),
            });
        }
        let shape = Shape::new(m.rows(), sb.cols);
        let mut out = vec![0.0; shape.len()];
        m.matmul_slice(&self.values[b.0], sb.cols, &mut out);
        let rg = self.any_requires(&[b]);
        Ok(self.push(
            Op::SparseMatmul {
                m: Arc::clone(m),
                b,
            },
            shape,
            out,
            rg,
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TapeError::ShapeMismatch {
                op: "add",
                details: format!("{}x{} vs {}x{}", sa.rows, sa.cols, sb.rows, sb.cols),
            });
        }
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Op::Add { a, b }, sa, out, rg))
    }

    /// Adds a `1 x c` bias row to every row of `a`.
    pub fn add_row_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.rows != 1 || sb.cols != sa.cols {
            return Err(TapeError::ShapeMismatch {
                op: "add_row_bias",
                details: format!("{}x{} + bias {}x{}", sa.rows, sa.cols, sb.rows, sb.cols),
            });
        }
        let bias_v = &self.values[bias.0];
        let mut out = Vec::with_capacity(sa.len());
        for r in 0..sa.rows {
            for (c, bv) in bias_v.iter().enumerate() {
                out.push(self.values[a.0][r * sa.cols + c] + bv);
            }
        }
        let rg = self.any_requires(&[a, bias]);
        Ok(self.push(Op::AddRowBias { a, bias }, sa, out, rg))
    }

    pub fn elem_mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TapeError::ShapeMismatch {
                op: "elem_mul",
                details: format!("{}x{} vs {}x{}", sa.rows, sa.cols, sb.rows, sb.cols),
            });
        }
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Op::ElemMul { a, b }, sa, out, rg))
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, a: TensorId, mul: f64, add: f64) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0].iter().map(|x| mul * x + add).collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Affine { a, mul }, sa, out, rg))
    }

    pub fn row_sum(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = (0..sa.rows)
            .map(|r| {
                self.values[a.0][r * sa.cols..(r + 1) * sa.cols]
                    .iter()
                    .sum()
            })
            .collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::RowSum { a }, Shape::new(sa.rows, 1), out, rg))
    }

    pub fn row_mean(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let inv = 1.0 / sa.cols as f64;
        let out: Vec<f64> = (0..sa.rows)
            .map(|r| {
                self.values[a.0][r * sa.cols..(r + 1) * sa.cols]
                    .iter()
                    .sum::<f64>()
                    * inv
            })
            .collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::RowMean { a }, Shape::new(sa.rows, 1), out, rg))
    }

    /// Row-wise maximum; ties resolve to the lowest column index.
    pub fn row_max(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let mut out = Vec::with_capacity(sa.rows);
        let mut argmax = Vec::with_capacity(sa.rows);
        for r in 0..sa.rows {
            let row = &self.values[a.0][r * sa.cols..(r + 1) * sa.cols];
            let mut best = row[0];
            let mut best_c = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            out.push(best);
            argmax.push(best_c);
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::RowMax { a, argmax }, Shape::new(sa.rows, 1), out, rg))
    }

    /// Concatenates tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TapeError::NoInputs { op: "concat_cols" });
        }
        let rows = self.shape(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.rows != rows {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    details: format!("row counts {} vs {}", rows, sp.rows),
                });
            }
            cols += sp.cols;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let sp = self.shape(p);
                out.extend_from_slice(&self.values[p.0][r * sp.cols..(r + 1) * sp.cols]);
            }
        }
        let rg = self.any_requires(parts);
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            Shape::new(rows, cols),
            out,
            rg,
        ))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Sigmoid { a }, sa, out, rg))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0].iter().map(|&x| x.max(0.0)).collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Relu { a }, sa, out, rg))
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0].iter().map(|&x| x.tanh()).collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Tanh { a }, sa, out, rg))
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0].iter().map(|&x| x.exp()).collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Exp { a }, sa, out, rg))
    }

    /// Natural log with the input clamped at [`LOG_CLAMP`] for stability.
    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .map(|&x| x.max(LOG_CLAMP).ln())
            .collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Log { a }, sa, out, rg))
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> Result<TensorId> {
        if lo > hi {
            return Err(TapeError::BadClampBounds { lo, hi });
        }
        let sa = self.shape(a);
        let out: Vec<f64> = self.values[a.0].iter().map(|&x| x.clamp(lo, hi)).collect();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Clamp { a, lo, hi }, sa, out, rg))
    }

    /// Numerically stable row-wise softmax (max-subtracted).
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let mut out = Vec::with_capacity(sa.len());
        for r in 0..sa.rows {
            let row = &self.values[a.0][r * sa.cols..(r + 1) * sa.cols];
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            out.extend(exps.into_iter().map(|e| e / z));
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::SoftmaxRows { a }, sa, out, rg))
    }

    /// out[k, :] = a[idx[k], :].
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let sa = self.shape(a);
        if idx.is_empty() {
            return Err(TapeError::NoInputs { op: "gather_rows" });
        }
        for &i in idx {
            if i >= sa.rows {
                return Err(TapeError::RowOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows: sa.rows,
                });
            }
        }
        let mut out = Vec::with_capacity(idx.len() * sa.cols);
        for &i in idx {
            out.extend_from_slice(&self.values[a.0][i * sa.cols..(i + 1) * sa.cols]);
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            Shape::new(idx.len(), sa.cols),
            out,
            rg,
        ))
    }

    /// Sums row k of `a` into output row `idx[k]`; rows receiving nothing
    /// stay zero. Per-cell contributions are summed in value order so the
    /// result is independent of the order of `idx`.
    pub fn scatter_add_rows(
        &mut self,
        a: TensorId,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<TensorId> {
        let sa = self.shape(a);
        if idx.len() != sa.rows {
            return Err(TapeError::ShapeMismatch {
                op: "scatter_add_rows",
                details: format!("{} indices for {} rows", idx.len(), sa.rows),
            });
        }
        for &i in idx {
            if i >= out_rows {
                return Err(TapeError::RowOutOfRange {
                    op: "scatter_add_rows",
                    index: i,
                    rows: out_rows,
                });
            }
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); out_rows];
        for (k, &dest) in idx.iter().enumerate() {
            groups[dest].push(k);
        }
        let mut out = vec![0.0; out_rows * sa.cols];
        let mut buf: Vec<f64> = Vec::new();
        for (dest, srcs) in groups.iter().enumerate() {
            if srcs.is_empty() {
                continue;
            }
            for c in 0..sa.cols {
                buf.clear();
                for &k in srcs {
                    buf.push(self.values[a.0][k * sa.cols + c]);
                }
                out[dest * sa.cols + c] = sorted_sum(&mut buf);
            }
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(
            Op::ScatterAddRows {
                a,
                idx: idx.to_vec(),
            },
            Shape::new(out_rows, sa.cols),
            out,
            rg,
        ))
    }

    /// Elementwise max of the rows scattered to each output row; rows with
    /// no contributor are zero. Ties go to the lowest source row index.
    pub fn scatter_max_rows(
        &mut self,
        a: TensorId,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<TensorId> {
        let sa = self.shape(a);
        if idx.len() != sa.rows {
            return Err(TapeError::ShapeMismatch {
                op: "scatter_max_rows",
                details: format!("{} indices for {} rows", idx.len(), sa.rows),
            });
        }
        for &i in idx {
            if i >= out_rows {
                return Err(TapeError::RowOutOfRange {
                    op: "scatter_max_rows",
                    index: i,
                    rows: out_rows,
                });
            }
        }
        let mut out = vec![0.0; out_rows * sa.cols];
        let mut winners = vec![usize::MAX; out_rows * sa.cols];
        for (k, &dest) in idx.iter().enumerate() {
            for c in 0..sa.cols {
                let v = self.values[a.0][k * sa.cols + c];
                let cell = dest * sa.cols + c;
                if winners[cell] == usize::MAX || v > out[cell] {
                    out[cell] = v;
                    winners[cell] = k;
                }
            }
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(
            Op::ScatterMaxRows { a, winners },
            Shape::new(out_rows, sa.cols),
            out,
            rg,
        ))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let mut out = vec![0.0; sa.len()];
        for r in 0..sa.rows {
            for c in 0..sa.cols {
                out[c * sa.rows + r] = self.values[a.0][r * sa.cols + c];
            }
        }
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::Transpose { a }, Shape::new(sa.cols, sa.rows), out, rg))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let total: f64 = self.values[a.0].iter().sum();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::SumAll { a }, Shape::scalar(), vec![total], rg))
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.shape(a).len() as f64;
        let total: f64 = self.values[a.0].iter().sum();
        let rg = self.any_requires(&[a]);
        Ok(self.push(Op::MeanAll { a }, Shape::scalar(), vec![total / n], rg))
    }

    /// Appends a custom op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        op: Box<dyn CustomOp>,
        inputs: &[TensorId],
        shape: Shape,
        value: Vec<f64>,
    ) -> Result<TensorId> {
        if value.len() != shape.len() {
            return Err(TapeError::ValueLength {
                rows: shape.rows,
                cols: shape.cols,
                len: value.len(),
            });
        }
        let rg = self.any_requires(inputs);
        Ok(self.push(
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            shape,
            value,
            rg,
        ))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Runs the chain rule from a scalar loss and accumulates d(loss)/d(t)
    /// into every requires-grad tensor's persistent gradient buffer.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let ls = self.shape(loss);
        if ls != Shape::scalar() {
            return Err(TapeError::NonScalarLoss {
                rows: ls.rows,
                cols: ls.cols,
            });
        }
        // Per-pass scratch gradients: empty vec means "no gradient yet".
        let mut scratch: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        scratch[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            if scratch[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            // Split scratch so we can read the output gradient while
            // accumulating into input gradients living at smaller indices.
            let (lower, upper) = scratch.split_at_mut(i);
            let g = upper[0].as_slice();
            self.propagate(i, g, lower);
        }

        for ((node, grad), s) in self.nodes.iter().zip(&mut self.grads).zip(&scratch) {
            if node.requires_grad && !s.is_empty() {
                if grad.is_empty() {
                    *grad = vec![0.0; node.shape.len()];
                }
                for (p, v) in grad.iter_mut().zip(s) {
                    *p += v;
                }
            }
        }
        Ok(())
    }

    /// Adds this node's contribution to its inputs' scratch gradients.
    /// `lower` holds scratch slots for all indices < node index; tape order
    /// guarantees inputs live there.
    fn propagate(&self, i: usize, g: &[f64], lower: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let ensure = |slot: &mut Vec<f64>, len: usize| {
            if slot.is_empty() {
                slot.resize(len, 0.0);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.nodes[a.0].shape, self.nodes[b.0].shape);
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], sa.len());
                    matmul_a_bt(
                        g,
                        sa.rows,
                        sb.cols,
                        &self.values[b.0],
                        sb.rows,
                        &mut lower[a.0],
                    );
                }
                if self.nodes[b.0].requires_grad {
                    ensure(&mut lower[b.0], sb.len());
                    matmul_at_b(
                        &self.values[a.0],
                        sa.rows,
                        sa.cols,
                        g,
                        sb.cols,
                        &mut lower[b.0],
                    );
                }
            }
            Op::SparseMatmul { m, b } => {
                if self.nodes[b.0].requires_grad {
                    let sb = self.nodes[b.0].shape;
                    ensure(&mut lower[b.0], sb.len());
                    m.matmul_transpose_slice(g, sb.cols, &mut lower[b.0]);
                }
            }
            Op::Add { a, b } => {
                for &t in &[*a, *b] {
                    if self.nodes[t.0].requires_grad {
                        ensure(&mut lower[t.0], g.len());
                        for (o, &gv) in lower[t.0].iter_mut().zip(g) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::AddRowBias { a, bias } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for (o, &gv) in lower[a.0].iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if self.nodes[bias.0].requires_grad {
                    let cols = self.nodes[bias.0].shape.cols;
                    ensure(&mut lower[bias.0], cols);
                    for (k, &gv) in g.iter().enumerate() {
                        lower[bias.0][k % cols] += gv;
                    }
                }
            }
            Op::ElemMul { a, b } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &bv) in lower[a.0].iter_mut().zip(g).zip(&self.values[b.0]) {
                        *o += gv * bv;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    ensure(&mut lower[b.0], g.len());
                    for ((o, &gv), &av) in lower[b.0].iter_mut().zip(g).zip(&self.values[a.0]) {
                        *o += gv * av;
                    }
                }
            }
            Op::Affine { a, mul, .. } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for (o, &gv) in lower[a.0].iter_mut().zip(g) {
                        *o += mul * gv;
                    }
                }
            }
            Op::RowSum { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for r in 0..sa.rows {
                        for c in 0..sa.cols {
                            lower[a.0][r * sa.cols + c] += g[r];
                        }
                    }
                }
            }
            Op::RowMean { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    let inv = 1.0 / sa.cols as f64;
                    ensure(&mut lower[a.0], sa.len());
                    for r in 0..sa.rows {
                        for c in 0..sa.cols {
                            lower[a.0][r * sa.cols + c] += g[r] * inv;
                        }
                    }
                }
            }
            Op::RowMax { a, argmax } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for (r, &c) in argmax.iter().enumerate() {
                        lower[a.0][r * sa.cols + c] += g[r];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.shape.rows;
                let total_cols = node.shape.cols;
                let mut offset = 0;
                for &p in parts {
                    let sp = self.nodes[p.0].shape;
                    if self.nodes[p.0].requires_grad {
                        ensure(&mut lower[p.0], sp.len());
                        for r in 0..rows {
                            for c in 0..sp.cols {
                                lower[p.0][r * sp.cols + c] += g[r * total_cols + offset + c];
                            }
                        }
                    }
                    offset += sp.cols;
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &y) in lower[a.0].iter_mut().zip(g).zip(&self.values[i]) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Relu { a } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &x) in lower[a.0].iter_mut().zip(g).zip(&self.values[a.0]) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Tanh { a } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &y) in lower[a.0].iter_mut().zip(g).zip(&self.values[i]) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Exp { a } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &y) in lower[a.0].iter_mut().zip(g).zip(&self.values[i]) {
                        *o += gv * y;
                    }
                }
            }
            Op::Log { a } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &x) in lower[a.0].iter_mut().zip(g).zip(&self.values[a.0]) {
                        if x > LOG_CLAMP {
                            *o += gv / x;
                        }
                    }
                }
            }
            Op::Clamp { a, lo, hi } => {
                if self.nodes[a.0].requires_grad {
                    ensure(&mut lower[a.0], g.len());
                    for ((o, &gv), &x) in lower[a.0].iter_mut().zip(g).zip(&self.values[a.0]) {
                        if x >= *lo && x <= *hi {
                            *o += gv;
                        }
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for r in 0..sa.rows {
                        let y = &self.values[i][r * sa.cols..(r + 1) * sa.cols];
                        let gr = &g[r * sa.cols..(r + 1) * sa.cols];
                        let dot: f64 = y.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..sa.cols {
                            lower[a.0][r * sa.cols + c] += y[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for (k, &src) in idx.iter().enumerate() {
                        for c in 0..sa.cols {
                            lower[a.0][src * sa.cols + c] += g[k * sa.cols + c];
                        }
                    }
                }
            }
            Op::ScatterAddRows { a, idx } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for (k, &dest) in idx.iter().enumerate() {
                        for c in 0..sa.cols {
                            lower[a.0][k * sa.cols + c] += g[dest * sa.cols + c];
                        }
                    }
                }
            }
            Op::ScatterMaxRows { a, winners, .. } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    let cols = sa.cols;
                    ensure(&mut lower[a.0], sa.len());
                    for (cell, &winner) in winners.iter().enumerate() {
                        if winner != usize::MAX {
                            let c = cell % cols;
                            lower[a.0][winner * cols + c] += g[cell];
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for r in 0..sa.rows {
                        for c in 0..sa.cols {
                            lower[a.0][r * sa.cols + c] += g[c * sa.rows + r];
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    ensure(&mut lower[a.0], sa.len());
                    for o in lower[a.0].iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::MeanAll { a } => {
                if self.nodes[a.0].requires_grad {
                    let sa = self.nodes[a.0].shape;
                    let inv = 1.0 / sa.len() as f64;
                    ensure(&mut lower[a.0], sa.len());
                    for o in lower[a.0].iter_mut() {
                        *o += g[0] * inv;
                    }
                }
            }
            Op::Custom { op, inputs } => {
                let in_vals: Vec<(&[f64], Shape)> = inputs
                    .iter()
                    .map(|t| (self.values[t.0].as_slice(), self.nodes[t.0].shape))
                    .collect();
                let grads = op.backward(&in_vals, &self.values[i], g);
                debug_assert_eq!(grads.len(), inputs.len());
                for (t, grad) in inputs.iter().zip(grads) {
                    if let Some(gr) = grad {
                        if self.nodes[t.0].requires_grad {
                            let st = self.nodes[t.0].shape;
                            debug_assert_eq!(gr.len(), st.len());
                            ensure(&mut lower[t.0], st.len());
                            for (o, v) in lower[t.0].iter_mut().zip(gr) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Result of comparing analytic and central-difference gradients for one
/// named computation.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub name: String,
    /// Worst relative error across all perturbed elements.
    pub max_rel_err: f64,
    pub checked_elements: usize,
    pub passed: bool,
}

/// Relative error used by the finite-difference check:
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference gradient check. Builds the computation with `build`
/// from fresh leaves, compares the tape's gradients against
/// `(f(x+eps) - f(x-eps)) / 2 eps` for every element of every input, and
/// reports the worst relative error against `tol`.
pub fn finite_diff_check<F, E>(
    name: &str,
    shapes: &[Shape],
    init: &[Vec<f64>],
    tol: f64,
    build: F,
) -> std::result::Result<FiniteDiffReport, E>
where
    F: Fn(&mut Tape, &[TensorId]) -> std::result::Result<TensorId, E>,
    E: From<TapeError>,
{
    const EPS: f64 = 1e-5;
    assert_eq!(shapes.len(), init.len());

    let eval = |data: &[Vec<f64>]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let leaves: Vec<TensorId> = shapes
            .iter()
            .zip(data)
            .map(|(s, d)| tape.leaf(*s, d.clone(), true))
            .collect::<Result<_>>()?;
        let loss = build(&mut tape, &leaves)?;
        Ok(tape.value(loss)[0])
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let leaves: Vec<TensorId> = shapes
        .iter()
        .zip(init)
        .map(|(s, d)| tape.leaf(*s, d.clone(), true))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &leaves)?;
    tape.backward(loss).map_err(E::from)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&t| tape.grad(t).unwrap_or(&[]).to_vec())
        .collect();

    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Vec<f64>> = init.to_vec();
    for (ti, shape) in shapes.iter().enumerate() {
        for e in 0..shape.len() {
            let orig = work[ti][e];
            work[ti][e] = orig + EPS;
            let f_plus = eval(&work)?;
            work[ti][e] = orig - EPS;
            let f_minus = eval(&work)?;
            work[ti][e] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * EPS);
            let a = analytic[ti].get(e).copied().unwrap_or(0.0);
            max_err = max_err.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    Ok(FiniteDiffReport {
        name: name.to_string(),
        max_rel_err: max_err,
        checked_elements: checked,
        passed: max_err < tol,
    })
}
