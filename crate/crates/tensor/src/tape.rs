//! Define-by-run computation tape.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and returns gradients for the parameters that
//! were read through [`Tape::param`] or [`Tape::gather`].

use ndarray::{s, Array2, Axis};

use crate::params::{Grads, Matrix, ParamId, ParamStore};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const PROB_CLAMP: f64 = 1e-7;

/// A value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    BlockAttention { q: Var, k: Var, v: Var, blocks: Vec<usize>, scale: f64, weights: Vec<Matrix> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BceWithLogits { logits: Var, labels: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
}

struct Node {
    op: Op,
    // Empty for `Op::Param`; the value lives in the store.
    value: Matrix,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), Matrix::zeros((0, 0)));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows `ids` of the parameter table `table`. Panics on an out-of-range id.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = self.params.value(table);
        let mut out = Matrix::zeros((ids.len(), t.ncols()));
        for (k, &i) in ids.iter().enumerate() {
            out.row_mut(k).assign(&t.row(i));
        }
        self.push(Op::Gather { table, ids: ids.to_vec() }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    /// `a` plus the 1xN row `bias` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + self.value(bias);
        self.push(Op::AddRow(a, bias), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v)
    }

    /// Affine map `x · w + b` with `b` a 1xN row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Var {
        let v = self.value(a) * &m;
        self.push(Op::MulConst(a, m), v)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(Op::Softmax(a), v)
    }

    /// Scaled dot-product attention applied independently to consecutive
    /// row blocks of `q`, `k`, `v` with the given lengths. Rows of different
    /// blocks never attend to each other.
    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, blocks: &[usize], scale: f64) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(blocks.iter().sum::<usize>(), qv.nrows(), "block lengths must cover every row");
        let mut out = Matrix::zeros((qv.nrows(), vv.ncols()));
        let mut weights = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for &len in blocks {
            let r = start..start + len;
            let mut a = qv.slice(s![r.clone(), ..]).dot(&kv.slice(s![r.clone(), ..]).t()) * scale;
            for mut row in a.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let z = row.sum();
                row /= z;
            }
            out.slice_mut(s![r.clone(), ..]).assign(&a.dot(&vv.slice(s![r, ..])));
            weights.push(a);
            start += len;
        }
        self.push(Op::BlockAttention { q, k, v, blocks: blocks.to_vec(), scale, weights }, out)
    }

    /// Row-wise layer normalisation with 1xN `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= inv;
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, out)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let mut out = Matrix::zeros((rows.len(), src.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&src.row(r));
        }
        self.push(Op::SelectRows(a, rows.to_vec()), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` (an Nx1 column) against `labels`.
    ///
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]` for the loss value. The
    /// gradient is the unclamped `(sigmoid(z) - y) / n`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), (labels.len(), 1), "logits must be an Nx1 column");
        let n = labels.len().max(1) as f64;
        let loss: f64 = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| {
                let s = sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / n;
        self.push(
            Op::BceWithLogits { logits, labels: labels.to_vec() },
            Array2::from_elem((1, 1), loss),
        )
    }

    /// Mean softmax cross-entropy of each row of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len());
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let zsum = row.sum();
            row /= zsum;
            loss -= row[t].max(f64::MIN_POSITIVE).ln();
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            Array2::from_elem((1, 1), loss / n),
        )
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward() needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::new(self.params.len());

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Gather { table, ids } => {
                    let shape = self.params.value(*table).dim();
                    out.scatter_rows(*table, shape, ids, &g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::MulConst(a, m) => acc(&mut grads, *a, g * m),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, g * d);
                }
                Op::Relu(a) => {
                    let d = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g * d);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, y * &(g - dot));
                }
                Op::BlockAttention { q, k, v, blocks, scale, weights } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut gq = Matrix::zeros(qv.dim());
                    let mut gk = Matrix::zeros(kv.dim());
                    let mut gv = Matrix::zeros(vv.dim());
                    let mut start = 0;
                    for (&len, a) in blocks.iter().zip(weights) {
                        let r = start..start + len;
                        let go = g.slice(s![r.clone(), ..]);
                        gv.slice_mut(s![r.clone(), ..]).assign(&a.t().dot(&go));
                        let ga = go.dot(&vv.slice(s![r.clone(), ..]).t());
                        let dot = (&ga * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                        let gs = a * &(ga - dot) * *scale;
                        gq.slice_mut(s![r.clone(), ..]).assign(&gs.dot(&kv.slice(s![r.clone(), ..])));
                        gk.slice_mut(s![r.clone(), ..]).assign(&gs.t().dot(&qv.slice(s![r, ..])));
                        start += len;
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gain);
                    let n = xhat.ncols() as f64;
                    let mut dx = Matrix::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        let mut out_row = dx.row_mut(r);
                        for c in 0..xhat.ncols() {
                            out_row[c] = inv / n * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![row..row + h, ..]).to_owned());
                        row += h;
                    }
                }
                Op::BceWithLogits { logits, labels } => {
                    let z = self.value(*logits);
                    let n = labels.len().max(1) as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gz = Matrix::zeros(z.dim());
                    for (k, &y) in labels.iter().enumerate() {
                        gz[[k, 0]] = scale * (sigmoid(z[[k, 0]]) - y);
                    }
                    acc(&mut grads, *logits, gz);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = targets.len().max(1) as f64;
                    let mut gz = probs.clone();
                    for (k, &t) in targets.iter().enumerate() {
                        gz[[k, t]] -= 1.0;
                    }
                    acc(&mut grads, *logits, gz * (g[[0, 0]] / n));
                }
            }
        }
        out
    }
}
