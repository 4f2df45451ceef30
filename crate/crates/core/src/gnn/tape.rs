//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Only the operator set the model needs is supported. Composite operators
//! (layer norm, segment softmax pooling, row cosine) have hand-written
//! backward rules and cache what those rules need during the forward pass.

use std::rc::Rc;

use super::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + row` with `row` broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    Exp(Var),
    Gather(Var, Rc<[usize]>),
    /// Sums row `i` of the input into output row `index[i]`.
    ScatterAdd(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SegmentSoftmaxPool {
        x: Var,
        beta: Var,
        segments: Rc<[(usize, usize)]>,
        weights: Mat,
    },
    RowCosine {
        x: Var,
        i: usize,
        j: usize,
    },
    /// `max(sign * x + bias, 0)` on a 1x1 input.
    Hinge {
        x: Var,
        bias: f64,
        sign: f64,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, v.cols()), "broadcast row shape");
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Mat::from_vec(x.rows(), x.cols(), data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn gather(&mut self, a: Var, index: Rc<[usize]>) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros(index.len(), src.cols());
        for (o, &i) in index.iter().enumerate() {
            v.row_mut(o).copy_from_slice(src.row(i));
        }
        self.push(v, Op::Gather(a, index))
    }

    pub fn scatter_add(&mut self, a: Var, index: Rc<[usize]>, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), index.len());
        let mut v = Mat::zeros(rows, src.cols());
        for (i, &o) in index.iter().enumerate() {
            for (x, &y) in v.row_mut(o).iter_mut().zip(src.row(i)) {
                *x += y;
            }
        }
        self.push(v, Op::ScatterAdd(a, index))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows(), rows);
                v.row_mut(r)[c0..c0 + m.cols()].copy_from_slice(m.row(r));
                c0 += m.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros(src.rows(), width);
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + width]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let src = self.value(a);
        let cols = src.cols();
        let v = Mat::from_vec(count, cols, src.data()[start * cols..(start + count) * cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both 1 x cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// For every segment `(start, len)` of rows and every column `j`, the
    /// softmax-weighted mean of `x[., j]` with weights `softmax(beta * x[., j])`.
    /// `beta` is 1x1. Output is one row per segment.
    pub fn segment_softmax_pool(&mut self, x: Var, beta: Var, segments: Rc<[(usize, usize)]>) -> Var {
        let xv = self.value(x);
        let b = self.value(beta).data()[0];
        let cols = xv.cols();
        let mut weights = Mat::zeros(xv.rows(), cols);
        let mut out = Mat::zeros(segments.len(), cols);
        for (s, &(start, len)) in segments.iter().enumerate() {
            for c in 0..cols {
                let mut max = f64::NEG_INFINITY;
                for r in start..start + len {
                    max = max.max(b * xv.get(r, c));
                }
                let mut z = 0.0;
                for r in start..start + len {
                    let e = (b * xv.get(r, c) - max).exp();
                    weights.set(r, c, e);
                    z += e;
                }
                let mut acc = 0.0;
                for r in start..start + len {
                    let w = weights.get(r, c) / z;
                    weights.set(r, c, w);
                    acc += w * xv.get(r, c);
                }
                out.set(s, c, acc);
            }
        }
        self.push(
            out,
            Op::SegmentSoftmaxPool {
                x,
                beta,
                segments,
                weights,
            },
        )
    }

    /// Pooling weights of a [`Tape::segment_softmax_pool`] node.
    pub fn pool_weights(&self, v: Var) -> Option<&Mat> {
        match &self.nodes[v.0].op {
            Op::SegmentSoftmaxPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Cosine similarity of rows `i` and `j` of `x`, as a 1x1 value.
    pub fn row_cosine(&mut self, x: Var, i: usize, j: usize) -> Var {
        let xv = self.value(x);
        let c = cosine(xv.row(i), xv.row(j));
        self.push(Mat::filled(1, 1, c), Op::RowCosine { x, i, j })
    }

    pub fn hinge(&mut self, x: Var, bias: f64, sign: f64) -> Var {
        let v = (sign * self.value(x).data()[0] + bias).max(0.0);
        self.push(Mat::filled(1, 1, v), Op::Hinge { x, bias, sign })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut total = 0.0;
        for p in parts {
            total += self.value(*p).data()[0];
        }
        self.push(Mat::filled(1, 1, total), Op::Sum(parts.to_vec()))
    }

    /// Gradients of the 1x1 node `root` with respect to every node; `None`
    /// where the root does not depend on the node.
    pub fn backward(&self, root: Var) -> Vec<Option<Mat>> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (x, &y) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, y, |g, y| g * y);
                    let gb = zip_map(&g, x, |g, x| g * x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, s| g * s * (1.0 - s));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |g, t| g * (1.0 - t * t));
                    acc(&mut grads, *a, ga);
                }
                Op::OneMinus(a) => {
                    acc(&mut grads, *a, g.map(|x| -x));
                }
                Op::Exp(a) => {
                    let ga = zip_map(&g, &node.value, |g, e| g * e);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, index) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows(), src.cols());
                    for (o, &i) in index.iter().enumerate() {
                        for (x, &y) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAdd(a, index) => {
                    let mut ga = Mat::zeros(index.len(), g.cols());
                    for (i, &o) in index.iter().enumerate() {
                        ga.row_mut(i).copy_from_slice(g.row(o));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut gp = Mat::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        c0 += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gm = self.value(*gamma).data();
                    let mut gx = Mat::zeros(rows, cols);
                    let mut ggamma = Mat::zeros(1, cols);
                    let mut gbeta = Mat::zeros(1, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gy = g.row(r);
                        let xh = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = gy[c] * gm[c];
                            sum_d += d;
                            sum_dx += d * xh[c];
                            ggamma.data_mut()[c] += gy[c] * xh[c];
                            gbeta.data_mut()[c] += gy[c];
                        }
                        for c in 0..cols {
                            let d = gy[c] * gm[c];
                            gx.set(r, c, inv_std[r] / n * (n * d - sum_d - xh[c] * sum_dx));
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::SegmentSoftmaxPool {
                    x,
                    beta,
                    segments,
                    weights,
                } => {
                    let xv = self.value(*x);
                    let b = self.value(*beta).data()[0];
                    let mut gx = Mat::zeros(xv.rows(), xv.cols());
                    let mut gb = 0.0;
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        for c in 0..xv.cols() {
                            let y = node.value.get(s, c);
                            let go = g.get(s, c);
                            for r in start..start + len {
                                let w = weights.get(r, c);
                                let xr = xv.get(r, c);
                                gx.set(r, c, go * w * (1.0 + b * (xr - y)));
                                gb += go * w * xr * (xr - y);
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *beta, Mat::filled(1, 1, gb));
                }
                Op::RowCosine { x, i, j } => {
                    let xv = self.value(*x);
                    let (a, b) = (xv.row(*i), xv.row(*j));
                    let na = norm(a).max(COSINE_EPS);
                    let nb = norm(b).max(COSINE_EPS);
                    let c = node.value.data()[0];
                    let go = g.data()[0];
                    let mut gx = Mat::zeros(xv.rows(), xv.cols());
                    for k in 0..xv.cols() {
                        let da = b[k] / (na * nb) - c * a[k] / (na * na);
                        let db = a[k] / (na * nb) - c * b[k] / (nb * nb);
                        let cur = gx.get(*i, k);
                        gx.set(*i, k, cur + go * da);
                        let cur = gx.get(*j, k);
                        gx.set(*j, k, cur + go * db);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Hinge { x, bias, sign } => {
                    let inner = sign * self.value(*x).data()[0] + bias;
                    // Sub-gradient 0 at the kink.
                    let d = if inner > 0.0 { sign * g.data()[0] } else { 0.0 };
                    acc(&mut grads, *x, Mat::filled(1, 1, d));
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a).max(COSINE_EPS) * norm(b).max(COSINE_EPS))
}
