//! Reverse-mode automatic differentiation over rank-2 values.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] walks the nodes in reverse, accumulating
//! gradients into the [`ParamStore`] the parameters were read from.

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Exp(Var),
    EluPlusOne(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, index: Vec<usize> },
    SumAll(Var),
    RowSqNorm(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() on a non-scalar node");
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("tape values are finite")
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- leaves ----

    /// A constant (non-differentiated) leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant: shape does not match data");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    /// A differentiated leaf; its gradient is readable with [`Tape::grad`].
    pub fn variable(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "variable: shape does not match data");
        self.push(rows, cols, value, Op::Leaf, true)
    }

    /// Loads a rank-1 or rank-2 tensor as a constant leaf.
    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => panic!("tape inputs must be rank 1 or 2, got {s:?}"),
        };
        self.constant(r, c, t.data().to_vec())
    }

    /// Reads a parameter. Repeated reads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => panic!("parameters must be rank 1 or 2, got {s:?}"),
        };
        let v = self.push(r, c, t.data().to_vec(), Op::Param(id), t.requires_grad());
        self.params.insert(id, v);
        v
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (r, c, val) = (n.rows, n.cols, n.value.clone());
        self.constant(r, c, val)
    }

    // ---- products ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul: inner dimensions {k} and {k2} differ");
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(&mut out, self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n, out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_nt: inner dimensions {k} and {k2} differ");
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(&mut out, self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n, out, Op::MatMulNT(a, b), ng)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let ((k, m), (k2, n)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_tn: inner dimensions {k} and {k2} differ");
        let mut out = vec![0.0; m * n];
        kernels::gemm_tn(&mut out, self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n, out, Op::MatMulTN(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(c, r, out, Op::Transpose(a), ng)
    }

    // ---- elementwise ----

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> (usize, usize, Vec<f64>) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{name}: shapes {sa:?} and {sb:?} differ");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        (sa.0, sa.1, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out) = self.zip_same(a, b, "add", |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out) = self.zip_same(a, b, "sub", |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out) = self.zip_same(a, b, "mul", |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let ((r, c), sr) = (self.shape(a), self.shape(row));
        assert_eq!(sr, (1, c), "add_row: row has shape {sr:?}, expected (1, {c})");
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(p, q)| p + q)).collect();
        let ng = self.ng(a) || self.ng(row);
        self.push(r, c, out, Op::AddRow(a, row), ng)
    }

    fn col_broadcast(&mut self, a: Var, col: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> (usize, usize, Vec<f64>) {
        let ((r, c), sc) = (self.shape(a), self.shape(col));
        assert_eq!(sc, (r, 1), "{name}: column has shape {sc:?}, expected ({r}, 1)");
        let cv = self.value(col);
        let out = self
            .value(a)
            .chunks(c)
            .zip(cv)
            .flat_map(|(x, &s)| x.iter().map(move |&p| (p, s)))
            .map(|(p, s)| f(p, s))
            .collect();
        (r, c, out)
    }

    /// Adds `col[i]` to every entry of row `i`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c, out) = self.col_broadcast(a, col, "add_col", |p, s| p + s);
        let ng = self.ng(a) || self.ng(col);
        self.push(r, c, out, Op::AddCol(a, col), ng)
    }

    /// Scales row `i` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c, out) = self.col_broadcast(a, col, "mul_col", |p, s| p * s);
        let ng = self.ng(a) || self.ng(col);
        self.push(r, c, out, Op::MulCol(a, col), ng)
    }

    /// Divides row `i` by `col[i]`; every divisor must be positive.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        if let Some(row) = self.value(col).iter().position(|&d| !(d > 0.0)) {
            return Err(Error::NonFinite(format!("non-positive normalizer in row {row}")));
        }
        let (r, c, out) = self.col_broadcast(a, col, "div_col", |p, s| p / s);
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(r, c, out, Op::DivCol(a, col), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a fixed array (dropout and padding masks).
    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(k.len(), r * c, "mul_const: mask length differs from value");
        let out = self.value(a).iter().zip(&k).map(|(x, m)| x * m).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::MulConst(a, k), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.exp()).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Exp(a), ng)
    }

    /// `elu(x) + 1`, a strictly positive feature map.
    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x + 1.0 } else { x.exp() }).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::EluPlusOne(a), ng)
    }

    // ---- row-wise ----

    /// Row softmax stabilized by the row maximum. With a mask (row-major,
    /// same shape, `true` = allowed), disallowed entries come out exactly 0.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            assert_eq!(m.len(), r * c, "softmax mask shape differs from input");
        }
        let out = kernels::softmax_rows(self.value(a), r, c, mask)?;
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::Softmax(a), ng))
    }

    /// Layer normalization over each row with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c), "layer_norm: gamma shape");
        assert_eq!(self.shape(beta), (1, c), "layer_norm: beta shape");
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for (i, row) in self.value(x).chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(r, c, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Column `i` holds the squared norm of row `i`.
    pub fn row_sq_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).chunks(c).map(|row| row.iter().map(|x| x * x).sum()).collect();
        let ng = self.ng(a);
        self.push(r, 1, out, Op::RowSqNorm(a), ng)
    }

    // ---- structural ----

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c && len > 0, "slice_cols {start}+{len} out of {c}");
        let out = self.value(a).chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let ng = self.ng(a);
        self.push(r, len, out, Op::SliceCols { src: a, start }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= r && len > 0, "slice_rows {start}+{len} out of {r}");
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        self.push(len, c, out, Op::SliceRows { src: a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, r, "concat_cols: row counts differ");
                pc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(r, total, out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows: column counts differ");
            out.extend_from_slice(self.value(p));
            rows += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows of `table` selected by `index` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Var {
        let (r, c) = self.shape(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            assert!(i < r, "gather_rows: index {i} out of {r} rows");
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        self.push(index.len(), c, out, Op::GatherRows { table, index: index.to_vec() }, ng)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean of equally shaped values.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean_of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        self.scale(acc, 1.0 / parts.len() as f64)
    }

    /// Mean softmax cross-entropy of `logits` (batch × classes) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (b, c) = self.shape(logits);
        assert_eq!(b, targets.len(), "cross_entropy: {b} rows but {} targets", targets.len());
        let probs = kernels::softmax_rows(self.value(logits), b, c, None).expect("unmasked softmax");
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "cross_entropy: target {t} out of {c} classes");
            loss -= probs[i * c + t].max(f64::MIN_POSITIVE).ln();
        }
        let ng = self.ng(logits);
        self.push(
            1,
            1,
            vec![loss / b as f64],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        )
    }

    // ---- backward ----

    /// Back-propagates from a scalar `loss`, adding dLoss/dParam into each
    /// reachable trainable parameter's gradient in `store`. Gradients
    /// accumulate across calls until the store is zeroed.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NotScalar { rows: r, cols: c });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let t = store.get_mut(*id);
                if let Some(pg) = t.grad_mut() {
                    pg.iter_mut().zip(g).for_each(|(p, d)| *p += d);
                }
            }
            &Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.shape(a), self.shape(b));
                if self.ng(a) {
                    kernels::gemm_nt(acc(grads, a, m * k), g, self.value(b), m, n, k);
                }
                if self.ng(b) {
                    kernels::gemm_tn(acc(grads, b, k * n), self.value(a), g, k, m, n);
                }
            }
            &Op::MatMulNT(a, b) => {
                let ((m, k), (n, _)) = (self.shape(a), self.shape(b));
                if self.ng(a) {
                    kernels::gemm_nn(acc(grads, a, m * k), g, self.value(b), m, n, k);
                }
                if self.ng(b) {
                    kernels::gemm_tn(acc(grads, b, n * k), g, self.value(a), n, m, k);
                }
            }
            &Op::MatMulTN(a, b) => {
                let ((k, m), (_, n)) = (self.shape(a), self.shape(b));
                if self.ng(a) {
                    kernels::gemm_nt(acc(grads, a, k * m), self.value(b), g, k, n, m);
                }
                if self.ng(b) {
                    kernels::gemm_nn(acc(grads, b, k * n), self.value(a), g, k, m, n);
                }
            }
            &Op::Transpose(a) => {
                if self.ng(a) {
                    let da = acc(grads, a, rows * cols);
                    // value is cols_a × rows_a = rows × cols here
                    for p in 0..rows {
                        for q in 0..cols {
                            da[q * rows + p] += g[p * cols + q];
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                add_into(grads, self, a, g);
                add_into(grads, self, b, g);
            }
            &Op::Sub(a, b) => {
                add_into(grads, self, a, g);
                if self.ng(b) {
                    acc(grads, b, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            &Op::Mul(a, b) => {
                if self.ng(a) {
                    let bv = self.value(b);
                    acc(grads, a, g.len()).iter_mut().zip(g.iter().zip(bv)).for_each(|(d, (x, y))| *d += x * y);
                }
                if self.ng(b) {
                    let av = self.value(a);
                    acc(grads, b, g.len()).iter_mut().zip(g.iter().zip(av)).for_each(|(d, (x, y))| *d += x * y);
                }
            }
            &Op::AddRow(a, row) => {
                add_into(grads, self, a, g);
                if self.ng(row) {
                    let dr = acc(grads, row, cols);
                    for grow in g.chunks(cols) {
                        dr.iter_mut().zip(grow).for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::AddCol(a, col) => {
                add_into(grads, self, a, g);
                if self.ng(col) {
                    let dc = acc(grads, col, rows);
                    for (d, grow) in dc.iter_mut().zip(g.chunks(cols)) {
                        *d += grow.iter().sum::<f64>();
                    }
                }
            }
            &Op::MulCol(a, col) => {
                if self.ng(a) {
                    let cv = self.value(col);
                    let da = acc(grads, a, rows * cols);
                    for ((drow, grow), s) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(cv) {
                        drow.iter_mut().zip(grow).for_each(|(d, x)| *d += x * s);
                    }
                }
                if self.ng(col) {
                    let av = self.value(a);
                    let dc = acc(grads, col, rows);
                    for ((d, grow), arow) in dc.iter_mut().zip(g.chunks(cols)).zip(av.chunks(cols)) {
                        *d += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            &Op::DivCol(a, col) => {
                let cv = self.value(col);
                if self.ng(a) {
                    let da = acc(grads, a, rows * cols);
                    for ((drow, grow), s) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(cv) {
                        drow.iter_mut().zip(grow).for_each(|(d, x)| *d += x / s);
                    }
                }
                if self.ng(col) {
                    let out = &node.value;
                    let dc = acc(grads, col, rows);
                    for (((d, grow), orow), s) in dc.iter_mut().zip(g.chunks(cols)).zip(out.chunks(cols)).zip(cv) {
                        *d -= grow.iter().zip(orow).map(|(x, y)| x * y).sum::<f64>() / s;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if self.ng(a) {
                    acc(grads, a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x * s);
                }
            }
            Op::MulConst(a, k) => {
                if self.ng(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(k)).for_each(|(d, (x, m))| *d += x * m);
                }
            }
            &Op::Relu(a) => {
                if self.ng(a) {
                    let y = &node.value;
                    acc(grads, a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (x, &o))| if o > 0.0 { *d += x });
                }
            }
            &Op::Exp(a) => {
                if self.ng(a) {
                    let y = &node.value;
                    acc(grads, a, g.len()).iter_mut().zip(g.iter().zip(y)).for_each(|(d, (x, o))| *d += x * o);
                }
            }
            &Op::EluPlusOne(a) => {
                if self.ng(a) {
                    let y = &node.value;
                    acc(grads, a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (x, &o))| *d += if o > 1.0 { *x } else { x * o });
                }
            }
            &Op::Softmax(a) => {
                if self.ng(a) {
                    let y = &node.value;
                    let da = acc(grads, a, rows * cols);
                    for ((drow, grow), yrow) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                        for j in 0..cols {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                if self.ng(gamma) {
                    let dg = acc(grads, gamma, cols);
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if self.ng(beta) {
                    let db = acc(grads, beta, cols);
                    for grow in g.chunks(cols) {
                        db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                    }
                }
                if self.ng(x) {
                    let gv = self.value(gamma);
                    let nf = cols as f64;
                    let dx = acc(grads, x, rows * cols);
                    let mut dh = vec![0.0; cols];
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        let hrow = &xhat[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dh[j] = grow[j] * gv[j];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hrow).map(|(p, q)| p * q).sum();
                        let inv = inv_std[i];
                        for j in 0..cols {
                            dx[i * cols + j] += inv / nf * (nf * dh[j] - s1 - hrow[j] * s2);
                        }
                    }
                }
            }
            &Op::SliceCols { src, start } => {
                if self.ng(src) {
                    let sc = self.shape(src).1;
                    let ds = acc(grads, src, rows * sc);
                    for (drow, grow) in ds.chunks_mut(sc).zip(g.chunks(cols)) {
                        drow[start..start + cols].iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::SliceRows { src, start } => {
                if self.ng(src) {
                    let (sr, sc) = self.shape(src);
                    let ds = acc(grads, src, sr * sc);
                    ds[start * sc..(start + rows) * sc].iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if self.ng(p) {
                        let dp = acc(grads, p, rows * pc);
                        for (drow, grow) in dp.chunks_mut(pc).zip(g.chunks(cols)) {
                            drow.iter_mut().zip(&grow[offset..offset + pc]).for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.ng(p) {
                        acc(grads, p, len).iter_mut().zip(&g[offset..offset + len]).for_each(|(d, v)| *d += v);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { table, index } => {
                if self.ng(*table) {
                    let (tr, tc) = self.shape(*table);
                    let dt = acc(grads, *table, tr * tc);
                    for (row, &ix) in index.iter().enumerate() {
                        dt[ix * tc..(ix + 1) * tc]
                            .iter_mut()
                            .zip(&g[row * tc..(row + 1) * tc])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::SumAll(a) => {
                if self.ng(a) {
                    let len = self.value(a).len();
                    acc(grads, a, len).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::RowSqNorm(a) => {
                if self.ng(a) {
                    let (ar, ac) = self.shape(a);
                    let av = self.value(a);
                    let da = acc(grads, a, ar * ac);
                    for i in 0..ar {
                        for j in 0..ac {
                            da[i * ac + j] += 2.0 * av[i * ac + j] * g[i];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.ng(*logits) {
                    let (b, c) = self.shape(*logits);
                    let dl = acc(grads, *logits, b * c);
                    let scale = g[0] / b as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dl[i * c + j] += (probs[i * c + j] - onehot) * scale;
                        }
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(grads: &mut [Option<Vec<f64>>], tape: &Tape, v: Var, g: &[f64]) {
    if tape.ng(v) {
        acc(grads, v, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::params::ParamStore;

    fn store_with(shape: &[usize], data: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(shape.to_vec(), data).unwrap().with_grad());
        (s, id)
    }

    #[test]
    fn sum_gives_ones() {
        let (mut store, id) = store_with(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gives_two_w_and_accumulates() {
        let (mut store, id) = store_with(&[2], vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w);
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[2.0, 4.0]);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[4.0, 8.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut store, id) = store_with(&[2], vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        assert!(matches!(tape.backward(w, &mut store), Err(Error::NotScalar { rows: 1, cols: 2 })));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("frozen", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![5.0, 100.0, -3.0]);
        let y = tape.softmax_rows(x, Some(&[true, false, false])).unwrap();
        assert_eq!(tape.value(y), &[1.0, 0.0, 0.0]);
        let err = tape.softmax_rows(x, Some(&[false, false, false])).unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 0 }));
    }

    #[test]
    fn div_col_rejects_nonpositive() {
        let mut tape = Tape::new();
        let a = tape.constant(2, 1, vec![1.0, 1.0]);
        let d = tape.constant(2, 1, vec![1.0, 0.0]);
        assert!(tape.div_col(a, d).is_err());
    }
}
