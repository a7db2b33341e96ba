//! Define-by-run reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Operations return
//! [`Var`] handles into the tape; [`Tape::backward`] walks the recorded ops in
//! reverse and accumulates gradients into every leaf created with
//! `requires_grad`.
//!
//! All tensors are row-major `rows × cols` matrices of `f64`. Scalars are
//! `1 × 1`. The only broadcasts supported are the ones a point-wise network
//! needs: a `1 × C` bias row and an `N × 1` column scale.
//!
//! ```
//! use pushbound::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod gradcheck;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

/// Argument floor applied by [`Tape::log`].
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("tensor data length {actual} does not match shape {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        actual: usize,
    },
    #[error("{op}: index {index} out of range for bound {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                rows,
                cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::DataLength {
                    rows: rows.len(),
                    cols,
                    actual: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    Concat(Var, Var),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    WeightedGather {
        features: Var,
        weights: Var,
        table: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation of one forward pass.
///
/// Tapes are cheap to create; build a new one for every forward pass. A tape
/// is `Send` and shares no state with other tapes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Constant copy of `v`, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, record))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, record: Op) -> Var {
        let ta = self.value(a);
        let value = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta.data.iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(value, rg, record)
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let value = matmul_raw(ta, tb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `x[N×C] + bias[1×C]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: tx.shape(),
                right: tb.shape(),
            });
        }
        let mut value = tx.clone();
        for row in value.data.chunks_mut(tx.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(&tb.data) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, rg, Op::AddBias(x, bias)))
    }

    fn col_check(&self, op: &'static str, x: Var, s: Var) -> Result<()> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.cols != 1 || ts.rows != tx.rows {
            return Err(TensorError::ShapeMismatch {
                op,
                left: tx.shape(),
                right: ts.shape(),
            });
        }
        Ok(())
    }

    /// Scales each row of `x[N×C]` by the matching entry of `s[N×1]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        self.col_check("mul_col", x, s)?;
        let value = scale_rows(self.value(x), self.value(s), |v, s| v * s);
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, rg, Op::MulCol(x, s)))
    }

    /// Divides each row of `x[N×C]` by the matching entry of `s[N×1]`.
    pub fn div_col(&mut self, x: Var, s: Var) -> Result<Var> {
        self.col_check("div_col", x, s)?;
        let value = scale_rows(self.value(x), self.value(s), |v, s| v / s);
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, rg, Op::DivCol(x, s)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural log of `max(x, LOG_CLAMP)`; the gradient is zero below the clamp.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(LOG_CLAMP).ln(), Op::Log(x))
    }

    /// Square root; gradient defined as zero at 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0).sqrt(), Op::Sqrt(x))
    }

    /// `max(0, x)`; the gradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    /// `max(x, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(
            x,
            |v| if v > floor { v } else { floor },
            Op::ClampMin(x, floor),
        )
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.cols < 2 {
            return Err(TensorError::Invalid {
                op: "softmax",
                reason: format!("needs at least 2 columns, got {}", tx.cols),
            });
        }
        let mut value = tx.clone();
        for row in value.data.chunks_mut(tx.cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Softmax(x)))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows != tb.rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let cols = ta.cols + tb.cols;
        let mut data = Vec::with_capacity(ta.rows * cols);
        for r in 0..ta.rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor {
            rows: ta.rows,
            cols,
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Concat(a, b)))
    }

    /// Row gather: output row `m` is `x[indices[m]]`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        check_indices("gather", indices, tx.rows)?;
        let mut data = Vec::with_capacity(indices.len() * tx.cols);
        for &i in indices {
            data.extend_from_slice(tx.row(i));
        }
        let value = Tensor {
            rows: indices.len(),
            cols: tx.cols,
            data,
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Gather(x, indices.to_vec())))
    }

    /// Per-row element pick: output `[N×1]` with entry `x[n, cols[n]]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if cols.len() != tx.rows {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                left: tx.shape(),
                right: [cols.len(), 1],
            });
        }
        check_indices("pick", cols, tx.cols)?;
        let data = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| tx.get(r, c))
            .collect();
        let value = Tensor {
            rows: tx.rows,
            cols: 1,
            data,
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Pick(x, cols.to_vec())))
    }

    /// Single column `x[:, col]` as `[N×1]`.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let cols = vec![col; self.value(x).rows];
        self.pick(x, &cols)
    }

    /// Sum over columns: `[N×C] -> [N×1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = (0..tx.rows).map(|r| tx.row(r).iter().sum()).collect();
        let value = Tensor {
            rows: tx.rows,
            cols: 1,
            data,
        };
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::RowSum(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(TensorError::Invalid {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let m = tx.data.iter().sum::<f64>() / tx.len() as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(m), rg, Op::Mean(x)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let tx = self.value(x);
        if rows * cols != tx.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: tx.shape(),
                right: [rows, cols],
            });
        }
        let value = Tensor {
            rows,
            cols,
            data: tx.data.clone(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Per-group, per-channel maximum. `groups` is a flat `M × k` table of row
    /// indices into `features`; ties route to the lowest row index.
    pub fn grouped_max_pool(&mut self, features: Var, groups: &[usize], k: usize) -> Result<Var> {
        let tf = self.value(features);
        if k == 0 || groups.len() % k != 0 {
            return Err(TensorError::Invalid {
                op: "grouped_max_pool",
                reason: format!("table of length {} is not a multiple of k={k}", groups.len()),
            });
        }
        check_indices("grouped_max_pool", groups, tf.rows)?;
        let m = groups.len() / k;
        let f = tf.cols;
        let mut data = vec![0.0; m * f];
        let mut argmax = vec![0usize; m * f];
        for g in 0..m {
            let members = &groups[g * k..(g + 1) * k];
            for c in 0..f {
                let mut best = members[0];
                let mut best_v = tf.get(best, c);
                for &j in &members[1..] {
                    let v = tf.get(j, c);
                    if v > best_v || (v == best_v && j < best) {
                        best = j;
                        best_v = v;
                    }
                }
                data[g * f + c] = best_v;
                argmax[g * f + c] = best;
            }
        }
        let value = Tensor { rows: m, cols: f, data };
        let rg = self.rg(&[features]);
        Ok(self.push(value, rg, Op::MaxPool { input: features, argmax }))
    }

    /// Neighbor interpolation: output row `n` is
    /// `Σ_j weights[n, j] · features[table[n·k + j]]` with `k = weights.cols`.
    pub fn weighted_gather(&mut self, features: Var, weights: Var, table: &[usize]) -> Result<Var> {
        let (tf, tw) = (self.value(features), self.value(weights));
        if table.len() != tw.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_gather",
                left: tw.shape(),
                right: [table.len(), 1],
            });
        }
        check_indices("weighted_gather", table, tf.rows)?;
        let (n, k, f) = (tw.rows, tw.cols, tf.cols);
        let mut data = vec![0.0; n * f];
        for i in 0..n {
            let out = &mut data[i * f..(i + 1) * f];
            for j in 0..k {
                let w = tw.data[i * k + j];
                for (o, s) in out.iter_mut().zip(tf.row(table[i * k + j])) {
                    *o += w * s;
                }
            }
        }
        let value = Tensor { rows: n, cols: f, data };
        let rg = self.rg(&[features, weights]);
        Ok(self.push(
            value,
            rg,
            Op::WeightedGather {
                features,
                weights,
                table: table.to_vec(),
            },
        ))
    }

    /// Propagates `d loss / d leaf` into every `requires_grad` leaf.
    ///
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.add_assign(&g),
                    slot => {
                        *slot = Some(Tensor {
                            rows: node.value.rows,
                            cols: node.value.cols,
                            data: g,
                        })
                    }
                }
                continue;
            }
            self.backward_node(id, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows, ta.cols, tb.cols);
                if wants(a) {
                    // dA = dC · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &tb.data[p * n..(p + 1) * n];
                            ga[i * k + p] = dot(gi, bp);
                        }
                    }
                    send(a, ga);
                }
                if wants(b) {
                    // dB = Aᵀ · dC
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = ta.data[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            axpy(&mut gb[p * n..(p + 1) * n], a_ip, gi);
                        }
                    }
                    send(b, gb);
                }
            }
            &Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|x| -x).collect());
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if wants(a) {
                    send(a, g.iter().zip(&tb.data).map(|(g, y)| g * y).collect());
                }
                if wants(b) {
                    send(b, g.iter().zip(&ta.data).map(|(g, x)| g * x).collect());
                }
            }
            &Op::Div(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if wants(a) {
                    send(a, g.iter().zip(&tb.data).map(|(g, y)| g / y).collect());
                }
                if wants(b) {
                    let gb = g
                        .iter()
                        .zip(ta.data.iter().zip(&tb.data))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    send(b, gb);
                }
            }
            &Op::AddBias(x, bias) => {
                let c = out.cols;
                if wants(bias) {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c.max(1)) {
                        axpy(&mut gb, 1.0, row);
                    }
                    send(bias, gb);
                }
                send(x, g.to_vec());
            }
            &Op::MulCol(x, s) => {
                let (tx, ts) = (val(x), val(s));
                let c = tx.cols;
                if wants(x) {
                    let gx = scale_rows_raw(g, &ts.data, c, |g, s| g * s);
                    send(x, gx);
                }
                if wants(s) {
                    let gs = (0..tx.rows)
                        .map(|r| dot(&g[r * c..(r + 1) * c], tx.row(r)))
                        .collect();
                    send(s, gs);
                }
            }
            &Op::DivCol(x, s) => {
                let (tx, ts) = (val(x), val(s));
                let c = tx.cols;
                if wants(x) {
                    let gx = scale_rows_raw(g, &ts.data, c, |g, s| g / s);
                    send(x, gx);
                }
                if wants(s) {
                    let gs = (0..tx.rows)
                        .map(|r| {
                            let sr = ts.data[r];
                            -dot(&g[r * c..(r + 1) * c], tx.row(r)) / (sr * sr)
                        })
                        .collect();
                    send(s, gs);
                }
            }
            &Op::Scale(x, c) => send(x, g.iter().map(|g| g * c).collect()),
            &Op::AddScalar(x) => send(x, g.to_vec()),
            &Op::Exp(x) => send(x, g.iter().zip(&out.data).map(|(g, y)| g * y).collect()),
            &Op::Log(x) => {
                let gx = g
                    .iter()
                    .zip(&val(x).data)
                    .map(|(g, &v)| if v >= LOG_CLAMP { g / v } else { 0.0 })
                    .collect();
                send(x, gx);
            }
            &Op::Sqrt(x) => {
                let gx = g
                    .iter()
                    .zip(&out.data)
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect();
                send(x, gx);
            }
            &Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(&val(x).data)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                send(x, gx);
            }
            &Op::ClampMin(x, floor) => {
                let gx = g
                    .iter()
                    .zip(&val(x).data)
                    .map(|(g, &v)| if v > floor { *g } else { 0.0 })
                    .collect();
                send(x, gx);
            }
            &Op::Softmax(x) => {
                let c = out.cols;
                let mut gx = vec![0.0; g.len()];
                for r in 0..out.rows {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let inner = dot(gr, y);
                    for j in 0..c {
                        gx[r * c + j] = y[j] * (gr[j] - inner);
                    }
                }
                send(x, gx);
            }
            &Op::Concat(a, b) => {
                let (ca, cb) = (val(a).cols, val(b).cols);
                let c = ca + cb;
                if wants(a) {
                    let mut ga = Vec::with_capacity(out.rows * ca);
                    for r in 0..out.rows {
                        ga.extend_from_slice(&g[r * c..r * c + ca]);
                    }
                    send(a, ga);
                }
                if wants(b) {
                    let mut gb = Vec::with_capacity(out.rows * cb);
                    for r in 0..out.rows {
                        gb.extend_from_slice(&g[r * c + ca..(r + 1) * c]);
                    }
                    send(b, gb);
                }
            }
            Op::Gather(x, indices) => {
                let tx = val(*x);
                let c = tx.cols;
                let mut gx = vec![0.0; tx.len()];
                for (m, &i) in indices.iter().enumerate() {
                    axpy(&mut gx[i * c..(i + 1) * c], 1.0, &g[m * c..(m + 1) * c]);
                }
                send(*x, gx);
            }
            Op::Pick(x, cols) => {
                let tx = val(*x);
                let mut gx = vec![0.0; tx.len()];
                for (r, &c) in cols.iter().enumerate() {
                    gx[r * tx.cols + c] += g[r];
                }
                send(*x, gx);
            }
            &Op::RowSum(x) => {
                let tx = val(x);
                let mut gx = Vec::with_capacity(tx.len());
                for r in 0..tx.rows {
                    gx.extend(std::iter::repeat_n(g[r], tx.cols));
                }
                send(x, gx);
            }
            &Op::Sum(x) => send(x, vec![g[0]; val(x).len()]),
            &Op::Mean(x) => {
                let n = val(x).len();
                send(x, vec![g[0] / n as f64; n]);
            }
            &Op::Reshape(x) => send(x, g.to_vec()),
            Op::MaxPool { input, argmax } => {
                let tx = val(*input);
                let f = out.cols;
                let mut gx = vec![0.0; tx.len()];
                for (slot, &row) in argmax.iter().enumerate() {
                    gx[row * f + slot % f] += g[slot];
                }
                send(*input, gx);
            }
            Op::WeightedGather {
                features,
                weights,
                table,
            } => {
                let (tf, tw) = (val(*features), val(*weights));
                let (n, k, f) = (tw.rows, tw.cols, tf.cols);
                if wants(*features) {
                    let mut gf = vec![0.0; tf.len()];
                    for i in 0..n {
                        let gi = &g[i * f..(i + 1) * f];
                        for j in 0..k {
                            let src = table[i * k + j];
                            axpy(&mut gf[src * f..(src + 1) * f], tw.data[i * k + j], gi);
                        }
                    }
                    send(*features, gf);
                }
                if wants(*weights) {
                    let mut gw = vec![0.0; tw.len()];
                    for i in 0..n {
                        let gi = &g[i * f..(i + 1) * f];
                        for j in 0..k {
                            gw[i * k + j] = dot(gi, tf.row(table[i * k + j]));
                        }
                    }
                    send(*weights, gw);
                }
            }
        }
    }

    /// Hash of every data-dependent branch taken during the forward pass
    /// (relu/clamp activity, log clamping, pooling argmax).
    ///
    /// Two forward passes with equal signatures evaluate the same smooth
    /// branch, so a finite difference between them does not straddle a kink.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let input = |v: &Var| &self.nodes[v.0].value.data;
            match &node.op {
                Op::Relu(x) => hash_mask(&mut h, id, input(x).iter().map(|&v| v > 0.0)),
                Op::ClampMin(x, floor) => {
                    hash_mask(&mut h, id, input(x).iter().map(|&v| v > *floor))
                }
                Op::Log(x) => hash_mask(&mut h, id, input(x).iter().map(|&v| v >= LOG_CLAMP)),
                Op::Sqrt(x) => hash_mask(&mut h, id, input(x).iter().map(|&v| v > 0.0)),
                Op::MaxPool { argmax, .. } => {
                    id.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }
}

fn hash_mask(h: &mut DefaultHasher, id: usize, bits: impl Iterator<Item = bool>) {
    id.hash(h);
    for b in bits {
        b.hash(h);
    }
}

fn check_indices(op: &'static str, indices: &[usize], bound: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(TensorError::IndexOutOfRange { op, index, bound }),
        None => Ok(()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn scale_rows(x: &Tensor, s: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: x.rows,
        cols: x.cols,
        data: scale_rows_raw(&x.data, &s.data, x.cols, f),
    }
}

fn scale_rows_raw(x: &[f64], s: &[f64], cols: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (r, &sr) in s.iter().enumerate() {
        out.extend(x[r * cols..(r + 1) * cols].iter().map(|&v| f(v, sr)));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let out = &mut data[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a.data[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            axpy(out, a_ip, &b.data[p * n..(p + 1) * n]);
        }
    }
    Tensor { rows: m, cols: n, data }
}
