//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together
//! with the computed value. [`Graph::backward`] walks the record in reverse
//! and accumulates the adjoint of a scalar output with respect to every
//! node. A graph created with [`Graph::inference`] computes the same values
//! but keeps no record and refuses to differentiate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(1, 1, vec![value])
    }

    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(n, 1, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `a (n x k) * b (k x m)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(n, m, out)
}

/// `a^T (k x n) * b (n x m)` without materializing the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &b.data[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let row = &mut out[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(k, m, out)
}

/// `a (n x m) * b^T (m x k)`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols);
    let (n, m, k) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a.data[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b.data[j * m..(j + 1) * m];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(n, k, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `(n x m) + (1 x m)` broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Select(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Recording graph.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// Value-only graph.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((rv.rows, rv.cols), (1, av.cols), "broadcast row shape");
        let mut v = av.clone();
        for r in 0..v.rows {
            for (x, b) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&rv.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let v = self.value(a).zip(&c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: Tensor) -> Var {
        let v = self.value(a).zip(&c, |x, y| x + y);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols, "column slice out of range");
        let mut data = Vec::with_capacity(t.rows * len);
        for r in 0..t.rows {
            data.extend_from_slice(&t.data[r * t.cols + start..r * t.cols + start + len]);
        }
        let v = Tensor::new(t.rows, len, data);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                assert_eq!(t.rows, rows, "concat row count");
                data.extend_from_slice(&t.data[r * t.cols..(r + 1) * t.cols]);
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    /// Column vector of the flat (row-major) elements at `indices`.
    pub fn select(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let t = self.value(a);
        let v = Tensor::column(indices.iter().map(|&i| t.data[i]).collect());
        self.push(v, Op::Select(a, indices))
    }

    /// Adjoints of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::GraphNotRecorded);
        }
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::scalar(1.0));

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(*b));
                    let gb = matmul_tn(self.value(*a), &g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (s, x) in gr.data.iter_mut().zip(&g.data[r * g.cols..(r + 1) * g.cols]) {
                            *s += x;
                        }
                    }
                    acc(&mut adj, *a, g);
                    acc(&mut adj, *row, gr);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.map(|x| -x));
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip(self.value(*b), |x, y| x * y);
                    let gb = g.zip(self.value(*a), |x, y| x * y);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = g.zip(bv, |x, y| x / y);
                    let gb = g.zip(&node.value, |x, q| x * q).zip(bv, |x, y| -x / y);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut adj, *a, g.zip(c, |x, y| x * y)),
                Op::AddConst(a) | Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Scale(a, k) => acc(&mut adj, *a, g.map(|x| x * k)),
                Op::Tanh(a) => acc(&mut adj, *a, g.zip(&node.value, |x, y| x * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut adj, *a, g.zip(&node.value, |x, y| x * y * (1.0 - y))),
                Op::Abs(a) => {
                    let s = self.value(*a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut adj, *a, g.zip(&s, |x, y| x * y));
                }
                Op::Sqrt(a) => acc(&mut adj, *a, g.zip(&node.value, |x, y| x * 0.5 / y)),
                Op::Square(a) => acc(&mut adj, *a, g.zip(self.value(*a), |x, y| 2.0 * x * y)),
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut adj, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        let src = &g.data[row * g.cols..(row + 1) * g.cols];
                        ga.data[row * c + start..row * c + start + g.cols].copy_from_slice(src);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let mut gp = Tensor::zeros(r, c);
                        for row in 0..r {
                            let src = &g.data[row * g.cols + offset..row * g.cols + offset + c];
                            gp.data[row * c..(row + 1) * c].copy_from_slice(src);
                        }
                        offset += c;
                        acc(&mut adj, *p, gp);
                    }
                }
                Op::Select(a, indices) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (gi, &i) in g.data.iter().zip(indices) {
                        ga.data[i] += gi;
                    }
                    acc(&mut adj, *a, ga);
                }
            }
        }
        Ok(Gradients { adj })
    }
}

pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`; `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec())
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data[i] += h;
            let mut minus = x.clone();
            minus.data[i] -= h;
            g.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn check(x: Tensor, build: &dyn Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let out = build(&mut g, xv);
        let grads = g.backward(out).unwrap();
        let analytic = grads.get_or_zeros(xv, x.shape());
        let f = |x: &Tensor| {
            let mut g = Graph::inference();
            let xv = g.leaf(x.clone());
            let out = build(&mut g, xv);
            g.value(out).item()
        };
        let numeric = numeric_grad(&x, &f);
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn matmul_known_values() {
        let a = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(matmul(&a, &b).data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn elementwise_chain() {
        let x = t(2, 2, &[0.3, -0.7, 1.1, 0.2]);
        check(x, &|g, x| {
            let a = g.tanh(x);
            let b = g.sigmoid(x);
            let c = g.mul(a, b);
            let d = g.square(c);
            let e = g.add_scalar(d, 1.5);
            let f = g.sqrt(e);
            let h = g.div(f, e);
            let k = g.abs(x);
            let s = g.sub(h, k);
            let m = g.scale(s, -2.0);
            g.mean(m)
        });
    }

    #[test]
    fn matmul_and_broadcast() {
        let w = t(3, 2, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        check(w, &|g, w| {
            let x = g.leaf(t(4, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 0.2, 0.0, 1.0, -2.0, 0.7, 0.7, 0.1]));
            let b = g.leaf(t(1, 2, &[0.05, -0.05]));
            let z = g.matmul(x, w);
            let z = g.add_row(z, b);
            let z = g.tanh(z);
            g.sum(z)
        });
        let x = t(4, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 0.2, 0.0, 1.0, -2.0, 0.7, 0.7, 0.1]);
        check(x, &|g, x| {
            let w = g.leaf(t(3, 2, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
            let z = g.matmul(x, w);
            let z = g.square(z);
            g.sum(z)
        });
    }

    #[test]
    fn slicing_concat_select() {
        let x = t(2, 4, &[0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4]);
        check(x, &|g, x| {
            let a = g.slice_cols(x, 1, 2);
            let b = g.slice_cols(x, 0, 1);
            let c = g.concat_cols(&[a, b, a]);
            let d = g.tanh(c);
            let s = g.select(d, vec![0, 2, 5, 5]);
            let c2 = g.mul_const(s, Tensor::column(vec![1.0, 2.0, 3.0, 4.0]));
            let c3 = g.add_const(c2, Tensor::column(vec![0.5; 4]));
            let q = g.square(c3);
            g.sum(q)
        });
    }

    #[test]
    fn unused_input_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(3.0));
        let z = g.square(x);
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 4.0);
        assert!(grads.get(y).is_none());
        assert_eq!(grads.get_or_zeros(y, (1, 1)).item(), 0.0);
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::scalar(2.0));
        let z = g.square(x);
        assert_eq!(g.value(z).item(), 4.0);
        assert!(matches!(g.backward(z), Err(Error::GraphNotRecorded)));
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let z = g.add(y, x);
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }
}
