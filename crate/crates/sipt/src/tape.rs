//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Each operation records its inputs and its forward value. `backward` walks
//! the tape once in reverse and accumulates adjoints. One tape handles one
//! training step over a whole batch, so intermediate values never need
//! recomputation.
//!
//! All shapes are checked eagerly when the op is recorded; a shape mismatch is
//! a programming error and panics.

use crate::tensor::Tensor;

/// Epsilon added to the variance inside row normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value on the tape.
pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m x n] + [1 x n]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[m x n] * [1 x n]`, broadcast over rows.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    GatherRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    /// Rowwise `(x - mean) / sqrt(var + NORM_EPS)`.
    NormalizeRows(NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// `[m x n] -> [m x 1]`: entry `picks[r]` of each row.
    PickPerRow(NodeId, Vec<usize>),
    /// `[m x n] -> [m x 1]` row sums.
    RowSums(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Relu(NodeId),
    /// `[m x 1] -> [1 x 1]`: `ln(1 + sum_i exp(x_i))`, stabilized.
    Log1pSumExp(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients with respect to leaves (and any other nodes that received one).
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`; zeros if the node did not influence the output.
    pub fn get(&self, id: NodeId, rows: usize, cols: usize) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value.scalar()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape mismatch");
        let mut v = self.nodes[a].value.clone();
        for r in 0..m {
            for c in 0..n {
                *v.at_mut(r, c) += self.nodes[row].value.at(0, c);
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row shape mismatch");
        let mut v = self.nodes[a].value.clone();
        for r in 0..m {
            for c in 0..n {
                *v.at_mut(r, c) *= self.nodes[row].value.at(0, c);
            }
        }
        self.push(Op::MulRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = map(&self.nodes[a].value, |x| k * x);
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = map(&self.nodes[a].value, |x| x + k);
        self.push(Op::AddScalar(a), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let (m, n) = self.shape(a);
        let mut v = Tensor::zeros(idx.len(), n);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < m, "gather_rows index out of range");
            v.data[r * n..(r + 1) * n].copy_from_slice(self.nodes[a].value.row_slice(i));
        }
        self.push(Op::GatherRows(a, idx), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let mut v = Tensor::zeros(m, len);
        for r in 0..m {
            let src = self.nodes[a].value.row_slice(r);
            v.data[r * len..(r + 1) * len].copy_from_slice(&src[start..start + len]);
        }
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs parts");
        let m = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros(m, total);
        for r in 0..m {
            let mut off = 0;
            for &p in &parts {
                let n = self.shape(p).1;
                assert_eq!(self.shape(p).0, m, "concat_cols row mismatch");
                v.data[r * total + off..r * total + off + n]
                    .copy_from_slice(self.nodes[p].value.row_slice(r));
                off += n;
            }
        }
        self.push(Op::ConcatCols(parts), v)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows needs parts");
        let n = self.shape(parts[0]).1;
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(total * n);
        for &p in &parts {
            assert_eq!(self.shape(p).1, n, "concat_rows col mismatch");
            data.extend_from_slice(&self.nodes[p].value.data);
        }
        self.push(Op::ConcatRows(parts), Tensor::from_vec(total, n, data))
    }

    pub fn normalize_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        assert!(n > 0, "normalize_rows on empty rows");
        let mut v = Tensor::zeros(m, n);
        for r in 0..m {
            let row = self.nodes[a].value.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for c in 0..n {
                *v.at_mut(r, c) = (row[c] - mean) * inv;
            }
        }
        self.push(Op::NormalizeRows(a), v)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.nodes[a].value, gelu_tanh);
        self.push(Op::Gelu(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let mut v = Tensor::zeros(m, n);
        for r in 0..m {
            let row = self.nodes[a].value.row_slice(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..n {
                let e = (row[c] - mx).exp();
                *v.at_mut(r, c) = e;
                sum += e;
            }
            for c in 0..n {
                *v.at_mut(r, c) /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let mut v = Tensor::zeros(m, n);
        for r in 0..m {
            let row = self.nodes[a].value.row_slice(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for c in 0..n {
                *v.at_mut(r, c) = row[c] - lse;
            }
        }
        self.push(Op::LogSoftmaxRows(a), v)
    }

    pub fn pick_per_row(&mut self, a: NodeId, picks: Vec<usize>) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(picks.len(), m, "pick_per_row needs one index per row");
        let mut v = Tensor::zeros(m, 1);
        for (r, &c) in picks.iter().enumerate() {
            assert!(c < n, "pick_per_row column out of range");
            v.data[r] = self.nodes[a].value.at(r, c);
        }
        self.push(Op::PickPerRow(a, picks), v)
    }

    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let mut v = Tensor::zeros(m, 1);
        for r in 0..m {
            v.data[r] = self.nodes[a].value.row_slice(r).iter().sum();
        }
        let _ = n;
        self.push(Op::RowSums(a), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Op::SumAll(a), Tensor::from_vec(1, 1, vec![s]))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let len = self.nodes[a].value.len();
        assert!(len > 0, "mean_all on empty tensor");
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Op::MeanAll(a), Tensor::from_vec(1, 1, vec![s / len as f64]))
    }

    /// Elementwise sqrt; inputs must be nonnegative. The gradient is clamped
    /// near zero to avoid division blowups at exactly 0.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.nodes[a].value, |x| {
            debug_assert!(x >= 0.0, "sqrt of negative value");
            x.max(0.0).sqrt()
        });
        self.push(Op::Sqrt(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.nodes[a].value, |x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.nodes[a].value, |x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// `ln(1 + sum_i exp(x_i))` over a column vector, shifted by the max for
    /// stability. An empty input yields 0 (the empty sum).
    pub fn log1p_sum_exp(&mut self, a: NodeId) -> NodeId {
        let val = &self.nodes[a].value;
        assert_eq!(val.cols, 1, "log1p_sum_exp expects a column");
        let y = if val.rows == 0 {
            0.0
        } else {
            let mx = val.data.iter().cloned().fold(0.0f64, f64::max);
            let s = (-mx).exp() + val.data.iter().map(|x| (x - mx).exp()).sum::<f64>();
            mx + s.ln()
        };
        self.push(Op::Log1pSumExp(a), Tensor::from_vec(1, 1, vec![y]))
    }

    /// Runs reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor| {
            match &mut grads[target] {
                Some(acc) => {
                    for (a, d) in acc.data.iter_mut().zip(&delta.data) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, map(g, |x| -x));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, zip(g, &self.nodes[*b].value, |x, y| x * y));
                add_to(grads, *b, zip(g, &self.nodes[*a].value, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                let rowv = &self.nodes[*row].value;
                let (m, n) = g.shape();
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    for c in 0..n {
                        *da.at_mut(r, c) = g.at(r, c) * rowv.at(0, c);
                    }
                }
                add_to(grads, *a, da);
                let prod = zip(g, &self.nodes[*a].value, |x, y| x * y);
                add_to(grads, *row, col_sums(&prod));
            }
            Op::Scale(a, k) => add_to(grads, *a, map(g, |x| k * x)),
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let bt = self.nodes[*b].value.transpose();
                add_to(grads, *a, g.matmul(&bt));
                let at = self.nodes[*a].value.transpose();
                add_to(grads, *b, at.matmul(g));
            }
            Op::Transpose(a) => add_to(grads, *a, g.transpose()),
            Op::GatherRows(a, idx) => {
                let (m, n) = self.shape(*a);
                let mut da = Tensor::zeros(m, n);
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        *da.at_mut(i, c) += g.at(r, c);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = self.shape(*a);
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    for c in 0..*len {
                        *da.at_mut(r, start + c) = g.at(r, c);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows;
                let mut off = 0;
                for &p in parts {
                    let n = self.shape(p).1;
                    let mut dp = Tensor::zeros(m, n);
                    for r in 0..m {
                        for c in 0..n {
                            *dp.at_mut(r, c) = g.at(r, off + c);
                        }
                    }
                    add_to(grads, p, dp);
                    off += n;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols;
                let mut off = 0;
                for &p in parts {
                    let m = self.shape(p).0;
                    let dp = Tensor::from_vec(m, n, g.data[off * n..(off + m) * n].to_vec());
                    add_to(grads, p, dp);
                    off += m;
                }
            }
            Op::NormalizeRows(a) => {
                let (m, n) = self.shape(*a);
                let y = &self.nodes[id].value;
                let x = &self.nodes[*a].value;
                let nf = n as f64;
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    let xr = x.row_slice(r);
                    let mean = xr.iter().sum::<f64>() / nf;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    let gr = g.row_slice(r);
                    let yr = y.row_slice(r);
                    let g_mean = gr.iter().sum::<f64>() / nf;
                    let gy_mean = gr.iter().zip(yr).map(|(gv, yv)| gv * yv).sum::<f64>() / nf;
                    for c in 0..n {
                        *da.at_mut(r, c) = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::Gelu(a) => {
                add_to(grads, *a, zip(g, &self.nodes[*a].value, |gv, x| gv * gelu_tanh_grad(x)));
            }
            Op::SoftmaxRows(a) => {
                let p = &self.nodes[id].value;
                let (m, n) = p.shape();
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    let pr = p.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = pr.iter().zip(gr).map(|(pv, gv)| pv * gv).sum();
                    for c in 0..n {
                        *da.at_mut(r, c) = pr[c] * (gr[c] - dot);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let (m, n) = y.shape();
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..n {
                        *da.at_mut(r, c) = gr[c] - yr[c].exp() * gsum;
                    }
                }
                add_to(grads, *a, da);
            }
            Op::PickPerRow(a, picks) => {
                let (m, n) = self.shape(*a);
                let mut da = Tensor::zeros(m, n);
                for (r, &c) in picks.iter().enumerate() {
                    *da.at_mut(r, c) = g.at(r, 0);
                }
                add_to(grads, *a, da);
            }
            Op::RowSums(a) => {
                let (m, n) = self.shape(*a);
                let mut da = Tensor::zeros(m, n);
                for r in 0..m {
                    for c in 0..n {
                        *da.at_mut(r, c) = g.at(r, 0);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::SumAll(a) => {
                let (m, n) = self.shape(*a);
                add_to(grads, *a, Tensor::filled(m, n, g.scalar()));
            }
            Op::MeanAll(a) => {
                let (m, n) = self.shape(*a);
                let k = g.scalar() / (m * n) as f64;
                add_to(grads, *a, Tensor::filled(m, n, k));
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[id].value;
                add_to(grads, *a, zip(g, y, |gv, yv| gv / (2.0 * yv.max(1e-12))));
            }
            Op::Square(a) => {
                add_to(grads, *a, zip(g, &self.nodes[*a].value, |gv, x| gv * 2.0 * x));
            }
            Op::Relu(a) => {
                add_to(grads, *a, zip(g, &self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::Log1pSumExp(a) => {
                let x = &self.nodes[*a].value;
                let mut da = Tensor::zeros(x.rows, 1);
                if x.rows > 0 {
                    let mx = x.data.iter().cloned().fold(0.0f64, f64::max);
                    let s = (-mx).exp() + x.data.iter().map(|v| (v - mx).exp()).sum::<f64>();
                    for r in 0..x.rows {
                        da.data[r] = g.scalar() * (x.data[r] - mx).exp() / s;
                    }
                }
                add_to(grads, *a, da);
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor { rows: t.rows, cols: t.cols, data: t.data.iter().map(|&x| f(x)).collect() }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols);
    for r in 0..t.rows {
        for c in 0..t.cols {
            out.data[c] += t.at(r, c);
        }
    }
    out
}

/// Tanh approximation of the GELU activation.
pub fn gelu_tanh(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}
