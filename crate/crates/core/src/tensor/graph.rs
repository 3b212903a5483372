use super::conv::ConvGeometry;
use super::params::{ParamId, ParamStore};
use super::Scalar;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use std::collections::{BTreeMap, HashMap};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `[m, n] + [1, n]` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Array2<T>,
    },
    AvgPool(Var, usize),
    Mask(Var, Array2<T>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<T>,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// A recorded computation. Values are computed eagerly as ops are added;
/// [`Graph::backward`] walks the tape in reverse.
pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Array2<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.grads.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Array2<T>> {
        self.grads.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<T>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same
    /// node so gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let p = self.store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimension");
        let out = va.dot(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "matmul_nt inner dimension");
        let out = va.dot(&vb.t());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row expects a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row width");
        let out = va + vr;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// `x · w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) * k;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Per-row layer normalisation with affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.dim();
        assert_eq!(self.shape(gamma), (1, cols), "layer_norm gamma");
        assert_eq!(self.shape(beta), (1, cols), "layer_norm beta");
        let n = T::of(cols as f64);
        let mut xhat = Array2::<T>::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in vx.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(T::zero(), |a, b| a + b)
                / n;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &(&xhat * self.value(gamma)) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols rows must agree");
        let ng = parts.iter().any(|v| self.ng(*v));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows cols must agree");
        let ng = parts.iter().any(|v| self.ng(*v));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let out = self.value(table).select(Axis(0), rows);
        let ng = self.ng(table);
        self.push(out, Op::Gather(table, rows.to_vec()), ng)
    }

    /// Convolution of `x` (`[in_c, images*h*w]`) with `w`
    /// (`[out_c, in_c*k*k]`) and bias `b` (`[out_c, 1]`).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Var {
        let vx = self.value(x);
        assert_eq!(
            vx.dim(),
            (geom.in_channels, geom.images * geom.height * geom.width),
            "conv2d input layout"
        );
        assert_eq!(self.value(w).ncols(), geom.patch_len(), "conv2d weight");
        let out_c = self.value(w).nrows();
        assert_eq!(self.shape(b), (out_c, 1), "conv2d bias");
        let cols = geom.im2col(vx);
        let out = &self.value(w).dot(&cols) + self.value(b);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Conv { x, w, b, geom, cols }, ng)
    }

    /// Global average pool: `[c, images*hw]` → `[images, c]`.
    pub fn avg_pool(&mut self, x: Var, images: usize) -> Var {
        let vx = self.value(x);
        let (c, total) = vx.dim();
        assert_eq!(total % images, 0, "avg_pool image count");
        let hw = total / images;
        let inv = T::one() / T::of(hw as f64);
        let mut out = Array2::<T>::zeros((images, c));
        for ch in 0..c {
            let row = vx.row(ch);
            for n in 0..images {
                out[[n, ch]] = row.slice(s![n * hw..(n + 1) * hw]).sum() * inv;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::AvgPool(x, images), ng)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Array2<T>) -> Var {
        assert_eq!(self.shape(a), mask.dim(), "mask shape");
        let out = self.value(a) * &mask;
        let ng = self.ng(a);
        self.push(out, Op::Mask(a, mask), ng)
    }

    /// Mean cross-entropy of row-wise logits against class indices;
    /// returns a `[1, 1]` node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.nrows(), labels.len(), "cross_entropy batch");
        let probs = softmax_rows(vl.view());
        let mut total = T::zero();
        for (row, &y) in vl.rows().into_iter().zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln() + max;
            total = total + lse - row[y];
        }
        let loss = total / T::of(labels.len() as f64);
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        self.backward_from(loss, Array2::ones((1, 1)))
    }

    /// Back-propagates an arbitrary upstream gradient from `out`.
    pub fn backward_from(&self, out: Var, seed: Array2<T>) -> Gradients<T> {
        assert_eq!(self.shape(out), seed.dim(), "seed shape");
        let mut grads: Vec<Option<Array2<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut result = Gradients::default();

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Some(pid) = node.param {
                result.grads.insert(pid, g);
                continue;
            }
            let mut acc = |v: Var, delta: Array2<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulNT(a, b) => {
                    // out = a bᵀ ; da = g b ; db = gᵀ a
                    if self.ng(*a) {
                        acc(*a, g.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(*b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.clone());
                    }
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::Gelu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= T::one() - y * y);
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d = *d * y * (T::one() - y));
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= yv * dot);
                    }
                    acc(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*beta) {
                        acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*gamma) {
                        acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let dxhat = &g * self.value(*gamma);
                        let n = T::of(xhat.ncols() as f64);
                        let mut dx = Array2::<T>::zeros(xhat.dim());
                        for r in 0..xhat.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let mean_dh = dh.sum() / n;
                            let mean_dhx = dh.iter().zip(xh.iter()).fold(T::zero(), |a, (&p, &q)| a + p * q) / n;
                            for c in 0..xhat.ncols() {
                                dx[[r, c]] = inv_std[r] * (dh[c] - mean_dh - xh[c] * mean_dhx);
                            }
                        }
                        acc(*x, dx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.ng(*p) {
                            acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if self.ng(*p) {
                            acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        }
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::<T>::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::<T>::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::Gather(table, rows) => {
                    let mut d = Array2::<T>::zeros(self.value(*table).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(*table, d);
                }
                Op::Conv { x, w, b, geom, cols } => {
                    if self.ng(*b) {
                        acc(*b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if self.ng(*w) {
                        acc(*w, g.dot(&cols.t()));
                    }
                    if self.ng(*x) {
                        let dcols = self.value(*w).t().dot(&g);
                        acc(*x, geom.col2im(&dcols));
                    }
                }
                Op::AvgPool(x, images) => {
                    let (c, total) = self.value(*x).dim();
                    let hw = total / images;
                    let inv = T::one() / T::of(hw as f64);
                    let mut d = Array2::<T>::zeros((c, total));
                    for ch in 0..c {
                        for n in 0..*images {
                            let v = g[[n, ch]] * inv;
                            d.slice_mut(s![ch, n * hw..(n + 1) * hw]).fill(v);
                        }
                    }
                    acc(*x, d);
                }
                Op::Mask(a, m) => acc(*a, g * m),
                Op::CrossEntropy { logits, labels, probs } => {
                    let scale = g[[0, 0]] / T::of(labels.len() as f64);
                    let mut d = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        d[[r, y]] -= T::one();
                    }
                    acc(*logits, d * scale);
                }
            }
        }
        result
    }
}
