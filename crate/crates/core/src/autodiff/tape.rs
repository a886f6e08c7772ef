//! Eager reverse-mode tape.
//!
//! Every operation is evaluated immediately and recorded together with its
//! inputs. [`Tape::grad`] sweeps the record backwards; each vector-Jacobian
//! product is itself expressed with tape operations, so gradients can be
//! recorded (`create_graph = true`) and differentiated again. That is what the
//! gradient penalty and the surface-projection refinement rely on.
//!
//! Piecewise-linear primitives (ReLU, leaky ReLU, max, clamp) store the
//! switch pattern of their forward evaluation as a constant mask. Higher-order
//! derivatives hold that pattern fixed.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::conv;
use super::tensor::{self, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("node {0:?} was not recorded by this tape (run the forward pass first)")]
    NotRecorded(Var),
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Stride and zero padding of a cubic-kernel 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

type Mask = Arc<[f64]>;
type Indices = Arc<[usize]>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Pow(Var, f64),
    Mask(Var, Mask),
    Clamp(Var, Mask),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    SumRows(Var),
    BroadcastCols(Var),
    SumCols(Var),
    SumAll(Var),
    BroadcastScalar(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols { a: Var, start: usize },
    PadCols { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    PadRows { a: Var, start: usize },
    GatherRows(Var, Indices),
    ScatterRows(Var, Indices),
    SegmentMax(Var, Indices),
    SelectScatter(Var, Indices),
    SelectGather(Var, Indices),
    Conv3d { x: Var, w: Var, spec: ConvSpec },
    Conv3dInputGrad { g: Var, w: Var, spec: ConvSpec },
    Conv3dWeightGrad { x: Var, g: Var, spec: ConvSpec },
    AvgPool2(Var),
    AvgPool2Adjoint(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) | AddCol(a, b)
            | MulCol(a, b) | ConcatCols(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Pow(a, _) | Mask(a, _) | Clamp(a, _) => vec![*a],
            BroadcastRows(a) | SumRows(a) | BroadcastCols(a) | SumCols(a) | SumAll(a)
            | BroadcastScalar(a) | Reshape(a) | AvgPool2(a) | AvgPool2Adjoint(a) => vec![*a],
            SliceCols { a, .. } | PadCols { a, .. } | SliceRows { a, .. } | PadRows { a, .. } => {
                vec![*a]
            }
            GatherRows(a, _) | ScatterRows(a, _) | SegmentMax(a, _) | SelectScatter(a, _)
            | SelectGather(a, _) => vec![*a],
            ConcatRows(parts) => parts.clone(),
            Conv3d { x, w, .. } => vec![*x, *w],
            Conv3dInputGrad { g, w, .. } => vec![*g, *w],
            Conv3dWeightGrad { x, g, .. } => vec![*x, *g],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Record of evaluated operations.
///
/// A tape and its intermediates belong to one thread of execution; independent
/// tapes can live on separate threads.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Handles issued before the reset become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.recording = true;
    }

    /// A differentiable input.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v).expect("foreign Var")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Whether gradients can flow into `v`.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("foreign Var")].tracked
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(DiffError::NotRecorded(v));
        }
        Ok(v.index)
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op, tracked });
        Var { tape: self.id, index }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let tracked = self.recording && op.inputs().iter().any(|v| self.nodes[v.index].tracked);
        let op = if tracked { op } else { Op::Leaf };
        self.push_node(value, op, tracked)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        self.check(a)?;
        self.value(a).dims2().ok_or_else(|| DiffError::InvalidArgument {
            op,
            msg: format!("expected a matrix, got shape {:?}", self.shape(a)),
        })
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| x * c);
        Ok(self.push(v, Op::Scale(a, c)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).map(|x| x + c);
        Ok(self.push(v, Op::AddScalar(a)))
    }

    /// Elementwise `a^e`.
    pub fn pow(&mut self, a: Var, e: f64) -> Result<Var> {
        self.check(a)?;
        let v = if e == 0.0 {
            self.value(a).map(|_| 1.0)
        } else if e == 1.0 {
            self.value(a).clone()
        } else if e == 2.0 {
            self.value(a).map(|x| x * x)
        } else {
            self.value(a).map(|x| x.powf(e))
        };
        Ok(self.push(v, Op::Pow(a, e)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.pow(a, 2.0)
    }

    /// Multiplies by a constant mask of the same length.
    pub fn mask(&mut self, a: Var, mask: Arc<[f64]>) -> Result<Var> {
        self.check(a)?;
        if mask.len() != self.value(a).len() {
            return Err(DiffError::ShapeMismatch {
                op: "mask",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let src = self.value(a);
        let data = src.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let v = Tensor::new(src.shape().to_vec(), data);
        Ok(self.push(v, Op::Mask(a, mask)))
    }

    /// ReLU with derivative 0 at exactly 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.check(a)?;
        let mask: Arc<[f64]> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { 1.0 } else { slope })
            .collect();
        self.mask(a, mask)
    }

    /// Clamps into `[lo, hi]`; gradient is 1 strictly inside the range and 0 where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.check(a)?;
        let src = self.value(a);
        let mask: Arc<[f64]> = src
            .data()
            .iter()
            .map(|&x| if x >= lo && x <= hi { 1.0 } else { 0.0 })
            .collect();
        let v = src.map(|x| x.clamp(lo, hi));
        Ok(self.push(v, Op::Clamp(a, mask)))
    }

    // ----- linear algebra -----

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2("matmul", a)?;
        let (br, bc) = self.dims2("matmul", b)?;
        let inner_a = if ta { ar } else { ac };
        let inner_b = if tb { bc } else { br };
        if inner_a != inner_b {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let v = tensor::matmul(self.value(a), self.value(b), ta, tb);
        Ok(self.push(v, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Adds a `1 x C` row to every row of an `N x C` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_op("add_row", a, row, |x, r| x + r)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `N x C` matrix by a `1 x C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_op("mul_row", a, row, |x, r| x * r)?;
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// Adds an `N x 1` column to every column of an `N x C` matrix.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let v = self.col_op("add_col", a, col, |x, c| x + c)?;
        Ok(self.push(v, Op::AddCol(a, col)))
    }

    /// Multiplies every column of an `N x C` matrix by an `N x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let v = self.col_op("mul_col", a, col, |x, c| x * c)?;
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    fn row_op(&self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (n, c) = self.dims2(op, a)?;
        let (rr, rc) = self.dims2(op, row)?;
        if rr != 1 || rc != c {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: vec![n, c],
                rhs: vec![rr, rc],
            });
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .chunks_exact(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect::<Vec<_>>();
        Ok(Tensor::new(vec![n, c], data))
    }

    fn col_op(&self, op: &'static str, a: Var, col: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (n, c) = self.dims2(op, a)?;
        let (cr, cc) = self.dims2(op, col)?;
        if cr != n || cc != 1 {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: vec![n, c],
                rhs: vec![cr, cc],
            });
        }
        let k = self.value(col).data();
        let mut data = Vec::with_capacity(n * c);
        for (i, chunk) in self.value(a).data().chunks_exact(c.max(1)).enumerate() {
            data.extend(chunk.iter().map(|&x| f(x, k[i])));
        }
        Ok(Tensor::new(vec![n, c], data))
    }

    /// Repeats a `1 x C` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims2("broadcast_rows", a)?;
        if r != 1 {
            return Err(DiffError::InvalidArgument {
                op: "broadcast_rows",
                msg: format!("expected a single row, got {r} rows"),
            });
        }
        let row = self.value(a).data();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Ok(self.push(Tensor::matrix(n, c, data), Op::BroadcastRows(a)))
    }

    /// Column sums as a `1 x C` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.dims2("sum_rows", a)?;
        let mut out = vec![0.0; c];
        for chunk in self.value(a).data().chunks_exact(c.max(1)) {
            for (o, x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        Ok(self.push(Tensor::row(out), Op::SumRows(a)))
    }

    /// Repeats an `N x 1` column `c` times.
    pub fn broadcast_cols(&mut self, a: Var, c: usize) -> Result<Var> {
        let (n, k) = self.dims2("broadcast_cols", a)?;
        if k != 1 {
            return Err(DiffError::InvalidArgument {
                op: "broadcast_cols",
                msg: format!("expected a single column, got {k} columns"),
            });
        }
        let col = self.value(a).data();
        let data = (0..n).flat_map(|i| std::iter::repeat_n(col[i], c)).collect();
        Ok(self.push(Tensor::matrix(n, c, data), Op::BroadcastCols(a)))
    }

    /// Row sums as an `N x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.dims2("sum_cols", a)?;
        let data: Vec<f64> = if c == 0 {
            vec![0.0; self.value(a).shape()[0]]
        } else {
            self.value(a).data().chunks_exact(c).map(|r| r.iter().sum()).collect()
        };
        Ok(self.push(Tensor::column(data), Op::SumCols(a)))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Expands a one-element tensor to `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        if self.value(a).len() != 1 {
            return Err(DiffError::InvalidArgument {
                op: "broadcast_scalar",
                msg: format!("expected one element, got shape {:?}", self.shape(a)),
            });
        }
        let v = Tensor::full(shape, self.value(a).item());
        Ok(self.push(v, Op::BroadcastScalar(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = self.value(a).reshaped(shape);
        Ok(self.push(v, Op::Reshape(a)))
    }

    // ----- slicing and gathering -----

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.dims2("concat_cols", a)?;
        let (nb, cb) = self.dims2("concat_cols", b)?;
        if na != nb {
            return Err(DiffError::ShapeMismatch {
                op: "concat_cols",
                lhs: vec![na, ca],
                rhs: vec![nb, cb],
            });
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(na * (ca + cb));
        for i in 0..na {
            data.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        Ok(self.push(Tensor::matrix(na, ca + cb, data), Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = self.dims2("slice_cols", a)?;
        if start + len > c {
            return Err(DiffError::InvalidArgument {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of {c}", start + len),
            });
        }
        let d = self.value(a).data();
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::matrix(n, len, data), Op::SliceCols { a, start }))
    }

    /// Embeds `a` into zero columns `start..start + cols(a)` of a `total`-column matrix.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let (n, c) = self.dims2("pad_cols", a)?;
        if start + c > total {
            return Err(DiffError::InvalidArgument {
                op: "pad_cols",
                msg: format!("{c} columns at {start} exceed {total}"),
            });
        }
        let d = self.value(a).data();
        let mut data = vec![0.0; n * total];
        for i in 0..n {
            data[i * total + start..i * total + start + c].copy_from_slice(&d[i * c..(i + 1) * c]);
        }
        Ok(self.push(Tensor::matrix(n, total, data), Op::PadCols { a, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(DiffError::InvalidArgument {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let (_, c) = self.dims2("concat_rows", first)?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (n, pc) = self.dims2("concat_rows", p)?;
            if pc != c {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += n;
        }
        Ok(self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = self.dims2("slice_rows", a)?;
        if start + len > n {
            return Err(DiffError::InvalidArgument {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of {n}", start + len),
            });
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows { a, start }))
    }

    pub fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let (n, c) = self.dims2("pad_rows", a)?;
        if start + n > total {
            return Err(DiffError::InvalidArgument {
                op: "pad_rows",
                msg: format!("{n} rows at {start} exceed {total}"),
            });
        }
        let mut data = vec![0.0; total * c];
        data[start * c..(start + n) * c].copy_from_slice(self.value(a).data());
        Ok(self.push(Tensor::matrix(total, c, data), Op::PadRows { a, start }))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (n, c) = self.dims2("gather_rows", a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(DiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of {n}"),
            });
        }
        let d = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let rows = idx.len();
        Ok(self.push(Tensor::matrix(rows, c, data), Op::GatherRows(a, idx)))
    }

    /// Adjoint of [`Tape::gather_rows`]: row `k` of `a` is added into row `idx[k]` of an `n`-row zero matrix.
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let (r, c) = self.dims2("scatter_rows", a)?;
        if r != idx.len() || idx.iter().any(|&i| i >= n) {
            return Err(DiffError::InvalidArgument {
                op: "scatter_rows",
                msg: format!("{r} rows with {} indices into {n}", idx.len()),
            });
        }
        let d = self.value(a).data();
        let mut data = vec![0.0; n * c];
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] += d[k * c + j];
            }
        }
        Ok(self.push(Tensor::matrix(n, c, data), Op::ScatterRows(a, idx)))
    }

    /// Column-wise maximum over contiguous row segments.
    ///
    /// `offsets` has one more entry than there are segments; segment `s` spans
    /// rows `offsets[s]..offsets[s + 1]`. Returns a `segments x C` matrix. Ties
    /// resolve to the first maximal row.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2("segment_max", a)?;
        let valid = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == n
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(DiffError::InvalidArgument {
                op: "segment_max",
                msg: format!("offsets {offsets:?} do not partition {n} rows into non-empty segments"),
            });
        }
        let d = self.value(a).data();
        let segments = offsets.len() - 1;
        let mut rows = Vec::with_capacity(segments * c);
        let mut data = Vec::with_capacity(segments * c);
        for s in 0..segments {
            for j in 0..c {
                let mut best = offsets[s];
                for i in offsets[s] + 1..offsets[s + 1] {
                    if d[i * c + j] > d[best * c + j] {
                        best = i;
                    }
                }
                rows.push(best);
                data.push(d[best * c + j]);
            }
        }
        let v = Tensor::matrix(segments, c, data);
        Ok(self.push(v, Op::SegmentMax(a, rows.into())))
    }

    fn select_scatter(&mut self, a: Var, rows: Arc<[usize]>, n: usize) -> Result<Var> {
        let (_, c) = self.dims2("select_scatter", a)?;
        let d = self.value(a).data();
        let mut data = vec![0.0; n * c];
        for (k, &r) in rows.iter().enumerate() {
            data[r * c + k % c] += d[k];
        }
        Ok(self.push(Tensor::matrix(n, c, data), Op::SelectScatter(a, rows)))
    }

    fn select_gather(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var> {
        let (_, c) = self.dims2("select_gather", a)?;
        let d = self.value(a).data();
        let data = rows.iter().enumerate().map(|(k, &r)| d[r * c + k % c]).collect();
        let segments = rows.len() / c.max(1);
        Ok(self.push(Tensor::matrix(segments, c, data), Op::SelectGather(a, rows)))
    }

    // ----- volumes -----

    /// 3D convolution of `x: [B, Ci, D, H, W]` with `w: [Co, Ci, K, K, K]`.
    pub fn conv3d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let y_shape = conv::output_shape(self.shape(x), self.shape(w), spec).map_err(|msg| {
            DiffError::InvalidArgument { op: "conv3d", msg }
        })?;
        let v = conv::forward(self.value(x), self.value(w), &y_shape, spec);
        Ok(self.push(v, Op::Conv3d { x, w, spec }))
    }

    fn conv3d_input_grad(&mut self, g: Var, w: Var, x_shape: &[usize], spec: ConvSpec) -> Var {
        let v = conv::input_grad(self.value(g), self.value(w), x_shape, spec);
        self.push(v, Op::Conv3dInputGrad { g, w, spec })
    }

    fn conv3d_weight_grad(&mut self, x: Var, g: Var, w_shape: &[usize], spec: ConvSpec) -> Var {
        let v = conv::weight_grad(self.value(x), self.value(g), w_shape, spec);
        self.push(v, Op::Conv3dWeightGrad { x, g, spec })
    }

    /// 2x2x2 average pooling of `[B, C, D, H, W]` with even spatial extents.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        if s.len() != 5 || s[2..].iter().any(|e| e % 2 != 0) {
            return Err(DiffError::InvalidArgument {
                op: "avg_pool2",
                msg: format!("expected [B, C, D, H, W] with even extents, got {s:?}"),
            });
        }
        let v = conv::avg_pool2(self.value(x));
        Ok(self.push(v, Op::AvgPool2(x)))
    }

    fn avg_pool2_adjoint(&mut self, g: Var) -> Var {
        let v = conv::avg_pool2_adjoint(self.value(g));
        self.push(v, Op::AvgPool2Adjoint(g))
    }

    // ----- differentiation -----

    /// Gradients of `output` (seeded with ones) with respect to each of `wrt`.
    ///
    /// With `create_graph` the gradient computation is recorded and the
    /// returned nodes can be differentiated again. Inputs that `output` does
    /// not depend on receive zeros.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        self.check(output)?;
        let seed = Tensor::ones(self.shape(output));
        self.grad_with_seed(output, seed, wrt, create_graph)
    }

    /// Vector-Jacobian product of `output` with `seed`.
    pub fn grad_with_seed(
        &mut self,
        output: Var,
        seed: Tensor,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Vec<Var>> {
        let out_idx = self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        if seed.shape() != self.shape(output) {
            return Err(DiffError::ShapeMismatch {
                op: "grad seed",
                lhs: self.shape(output).to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }

        // nodes on some path from a wrt input to the output
        let mut needed = vec![false; out_idx + 1];
        for &w in wrt {
            if w.index <= out_idx && self.nodes[w.index].tracked {
                needed[w.index] = true;
            }
        }
        for i in 0..=out_idx {
            if needed[i] || !self.nodes[i].tracked {
                continue;
            }
            needed[i] = self.nodes[i].op.inputs().iter().any(|v| needed[v.index]);
        }

        let was_recording = self.recording;
        self.recording = create_graph;
        let result = self.sweep(out_idx, seed, &needed);
        self.recording = was_recording;
        let grads = result?;

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match grads.get(w.index).copied().flatten() {
                Some(g) => out.push(g),
                None => {
                    let z = Tensor::zeros(self.shape(w));
                    out.push(self.constant(z));
                }
            }
        }
        Ok(out)
    }

    fn sweep(&mut self, out_idx: usize, seed: Tensor, needed: &[bool]) -> Result<Vec<Option<Var>>> {
        let mut grads: Vec<Option<Var>> = vec![None; out_idx + 1];
        if !needed[out_idx] {
            return Ok(grads);
        }
        grads[out_idx] = Some(self.constant(seed));
        for i in (0..=out_idx).rev() {
            let Some(g) = grads[i] else { continue };
            if !needed[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let node = Var { tape: self.id, index: i };
            for (input, contribution) in self.vjp(node, &op, g)? {
                if !needed[input.index] {
                    continue;
                }
                grads[input.index] = Some(match grads[input.index] {
                    Some(prev) => self.add(prev, contribution)?,
                    None => contribution,
                });
            }
        }
        Ok(grads)
    }

    fn rows_of(&self, v: Var) -> usize {
        self.shape(v)[0]
    }

    fn cols_of(&self, v: Var) -> usize {
        self.shape(v)[1]
    }

    /// Input adjoints of `node` given its output adjoint `g`.
    fn vjp(&mut self, node: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        use Op::*;
        let out = match op {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g), (*b, g)],
            Sub(a, b) => vec![(*a, g), (*b, self.neg(g)?)],
            Mul(a, b) => vec![(*a, self.mul(g, *b)?), (*b, self.mul(g, *a)?)],
            Scale(a, c) => vec![(*a, self.scale(g, *c)?)],
            AddScalar(a) => vec![(*a, g)],
            Pow(a, e) => {
                if *e == 0.0 {
                    vec![]
                } else if *e == 1.0 {
                    vec![(*a, g)]
                } else {
                    let p = self.pow(*a, e - 1.0)?;
                    let d = self.scale(p, *e)?;
                    vec![(*a, self.mul(g, d)?)]
                }
            }
            Mask(a, m) | Clamp(a, m) => vec![(*a, self.mask(g, m.clone())?)],
            MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let ga = if ta {
                    self.matmul_t(b, g, tb, true)?
                } else {
                    self.matmul_t(g, b, false, !tb)?
                };
                let gb = if tb {
                    self.matmul_t(g, a, true, ta)?
                } else {
                    self.matmul_t(a, g, !ta, false)?
                };
                vec![(a, ga), (b, gb)]
            }
            AddRow(a, r) => vec![(*a, g), (*r, self.sum_rows(g)?)],
            MulRow(a, r) => {
                let ga = self.mul_row(g, *r)?;
                let ga_r = self.mul(g, *a)?;
                vec![(*a, ga), (*r, self.sum_rows(ga_r)?)]
            }
            AddCol(a, c) => vec![(*a, g), (*c, self.sum_cols(g)?)],
            MulCol(a, c) => {
                let ga = self.mul_col(g, *c)?;
                let gc = self.mul(g, *a)?;
                vec![(*a, ga), (*c, self.sum_cols(gc)?)]
            }
            BroadcastRows(a) => vec![(*a, self.sum_rows(g)?)],
            SumRows(a) => {
                let n = self.rows_of(*a);
                vec![(*a, self.broadcast_rows(g, n)?)]
            }
            BroadcastCols(a) => vec![(*a, self.sum_cols(g)?)],
            SumCols(a) => {
                let c = self.cols_of(*a);
                vec![(*a, self.broadcast_cols(g, c)?)]
            }
            SumAll(a) => {
                let shape = self.shape(*a).to_vec();
                vec![(*a, self.broadcast_scalar(g, &shape)?)]
            }
            BroadcastScalar(a) => {
                let shape = self.shape(*a).to_vec();
                let s = self.sum(g)?;
                vec![(*a, self.reshape(s, &shape)?)]
            }
            Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                vec![(*a, self.reshape(g, &shape)?)]
            }
            ConcatCols(a, b) => {
                let (ca, cb) = (self.cols_of(*a), self.cols_of(*b));
                vec![(*a, self.slice_cols(g, 0, ca)?), (*b, self.slice_cols(g, ca, cb)?)]
            }
            SliceCols { a, start } => {
                let total = self.cols_of(*a);
                vec![(*a, self.pad_cols(g, *start, total)?)]
            }
            PadCols { a, start } => {
                let c = self.cols_of(*a);
                vec![(*a, self.slice_cols(g, *start, c)?)]
            }
            ConcatRows(parts) => {
                let mut start = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = self.rows_of(p);
                    v.push((p, self.slice_rows(g, start, n)?));
                    start += n;
                }
                v
            }
            SliceRows { a, start } => {
                let total = self.rows_of(*a);
                vec![(*a, self.pad_rows(g, *start, total)?)]
            }
            PadRows { a, start } => {
                let n = self.rows_of(*a);
                vec![(*a, self.slice_rows(g, *start, n)?)]
            }
            GatherRows(a, idx) => {
                let n = self.rows_of(*a);
                vec![(*a, self.scatter_rows(g, idx.clone(), n)?)]
            }
            ScatterRows(a, idx) => vec![(*a, self.gather_rows(g, idx.clone())?)],
            SegmentMax(a, rows) | SelectGather(a, rows) => {
                let n = self.rows_of(*a);
                vec![(*a, self.select_scatter(g, rows.clone(), n)?)]
            }
            SelectScatter(a, rows) => vec![(*a, self.select_gather(g, rows.clone())?)],
            Conv3d { x, w, spec } => {
                let x_shape = self.shape(*x).to_vec();
                let w_shape = self.shape(*w).to_vec();
                let gx = self.conv3d_input_grad(g, *w, &x_shape, *spec);
                let gw = self.conv3d_weight_grad(*x, g, &w_shape, *spec);
                vec![(*x, gx), (*w, gw)]
            }
            Conv3dInputGrad { g: gy, w, spec } => {
                // output has the layout of the convolution input
                let w_shape = self.shape(*w).to_vec();
                let g_gy = self.conv3d(g, *w, *spec)?;
                let g_w = self.conv3d_weight_grad(g, *gy, &w_shape, *spec);
                vec![(*gy, g_gy), (*w, g_w)]
            }
            Conv3dWeightGrad { x, g: gy, spec } => {
                let x_shape = self.shape(*x).to_vec();
                let g_x = self.conv3d_input_grad(*gy, g, &x_shape, *spec);
                let g_gy = self.conv3d(*x, g, *spec)?;
                vec![(*x, g_x), (*gy, g_gy)]
            }
            AvgPool2(a) => vec![(*a, self.avg_pool2_adjoint(g))],
            AvgPool2Adjoint(a) => vec![(*a, self.avg_pool2(g)?)],
        };
        debug_assert!(
            out.iter().all(|(input, gv)| self.shape(*input) == self.shape(*gv)),
            "adjoint shape mismatch at {node:?}"
        );
        Ok(out)
    }
}
