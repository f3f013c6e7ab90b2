//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value is an `Array2<f64>`; row vectors are `1 x k` matrices and
//! scalars are `1 x 1`. Nodes are appended in evaluation order, so a single
//! reverse sweep over the node list yields all gradients.

use ndarray::{concatenate, s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    Row(Var, usize),
    Col(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    Blend { x: Var, p: Var, m: Var },
    ReplaceRows { x: Var, m: Var, replaced: Vec<bool> },
    SumSquaredDiff(Var, Var),
    MaskedMeanSquaredDiff(Var, Var, Vec<usize>),
    AbsMeanDeviation(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a later reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds the `1 x k` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.shape(bias).0, 1, "add_row_bias: bias must be a row");
        assert_eq!(self.shape(a).1, self.shape(bias).1, "add_row_bias: width");
        let value = self.value(a) + self.value(bias);
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddRowBias(a, bias), rg)
    }

    /// `x W + b` with `W` stored as `in x out` and `b` as `1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row_bias(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let value = self.value(a).slice(s![i..i + 1, ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Row(a, i), rg)
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let value = self.value(a).slice(s![.., j..j + 1]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Col(a, j), rg)
    }

    /// Stacks `1 x k` rows into an `n x k` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: empty");
        let views: Vec<_> = rows.iter().map(|r| self.value(*r).view()).collect();
        let value = concatenate(Axis(0), &views).expect("stack_rows: width mismatch");
        let rg = rows.iter().any(|r| self.rg(*r));
        self.push(value, Op::StackRows(rows.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value =
            concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()]).expect("concat_cols: row mismatch");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::ConcatCols(a, b), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise `p_i * x_i + (1 - p_i) * m` with `p` as `n x 1` and `m` as `1 x d`.
    pub fn blend(&mut self, x: Var, p: Var, m: Var) -> Var {
        let (n, d) = self.shape(x);
        assert_eq!(self.shape(p), (n, 1), "blend: scores shape");
        assert_eq!(self.shape(m), (1, d), "blend: mask shape");
        let xv = self.value(x);
        let pv = self.value(p);
        let mv = self.value(m);
        let mut value = Mat::zeros((n, d));
        for i in 0..n {
            let pi = pv[[i, 0]];
            for j in 0..d {
                value[[i, j]] = pi * xv[[i, j]] + (1.0 - pi) * mv[[0, j]];
            }
        }
        let rg = self.rg(x) || self.rg(p) || self.rg(m);
        self.push(value, Op::Blend { x, p, m }, rg)
    }

    /// Replaces row `i` of `x` with `m` wherever `replaced[i]` is set.
    pub fn replace_rows(&mut self, x: Var, m: Var, replaced: &[bool]) -> Var {
        let (n, d) = self.shape(x);
        assert_eq!(replaced.len(), n, "replace_rows: flag count");
        assert_eq!(self.shape(m), (1, d), "replace_rows: mask shape");
        let mut value = self.value(x).clone();
        let mrow = self.value(m).row(0).to_owned();
        for (i, &r) in replaced.iter().enumerate() {
            if r {
                value.row_mut(i).assign(&mrow);
            }
        }
        let rg = self.rg(x) || self.rg(m);
        self.push(
            value,
            Op::ReplaceRows {
                x,
                m,
                replaced: replaced.to_vec(),
            },
            rg,
        )
    }

    /// Sum of squared entry-wise differences, as a `1 x 1` node.
    pub fn sum_squared_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sum_squared_diff: shape");
        let total: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Mat::from_elem((1, 1), total), Op::SumSquaredDiff(a, b), rg)
    }

    /// Mean over the listed rows of the squared row distance between `a` and `b`.
    pub fn masked_mean_squared_diff(&mut self, a: Var, b: Var, rows: &[usize]) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "masked_mean_squared_diff: shape");
        assert!(!rows.is_empty(), "masked_mean_squared_diff: no rows");
        let av = self.value(a);
        let bv = self.value(b);
        let mut total = 0.0;
        for &r in rows {
            total += av
                .row(r)
                .iter()
                .zip(bv.row(r).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        let value = Mat::from_elem((1, 1), total / rows.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MaskedMeanSquaredDiff(a, b, rows.to_vec()), rg)
    }

    /// `|mean(p) - target|` over every entry of `p`.
    pub fn abs_mean_deviation(&mut self, p: Var, target: f64) -> Var {
        let pv = self.value(p);
        let mean = pv.sum() / pv.len() as f64;
        let rg = self.rg(p);
        self.push(
            Mat::from_elem((1, 1), (mean - target).abs()),
            Op::AbsMeanDeviation(p, target),
            rg,
        )
    }

    /// Reverse sweep from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                // Keep leaf gradients for the caller; interior ones are dropped.
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let d = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.rg(*a) {
                        let d = g.dot(self.value(*b));
                        accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = g.t().dot(self.value(*a));
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::AddRowBias(a, b) => {
                    if self.rg(*b) {
                        let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *b, d);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let d = &g * self.value(*b);
                        accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = &g * self.value(*a);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = &g * &y.mapv(|v| v * (1.0 - v));
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = &g * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, d);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g * *k);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    accumulate(&mut grads, *a, d);
                }
                Op::Row(a, i) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.row_mut(*i).assign(&g.row(0));
                    accumulate(&mut grads, *a, d);
                }
                Op::Col(a, j) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.column_mut(*j).assign(&g.column(0));
                    accumulate(&mut grads, *a, d);
                }
                Op::StackRows(rows) => {
                    for (i, r) in rows.iter().enumerate() {
                        if self.rg(*r) {
                            accumulate(&mut grads, *r, g.slice(s![i..i + 1, ..]).to_owned());
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let wa = self.shape(*a).1;
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.slice(s![.., ..wa]).to_owned());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.slice(s![.., wa..]).to_owned());
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = y.row(i).dot(&g.row(i));
                        for j in 0..y.ncols() {
                            d[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Blend { x, p, m } => {
                    let xv = self.value(*x);
                    let pv = self.value(*p);
                    let mv = self.value(*m);
                    let (n, dim) = xv.dim();
                    if self.rg(*x) {
                        let mut d = g.clone();
                        for i in 0..n {
                            let pi = pv[[i, 0]];
                            d.row_mut(i).mapv_inplace(|v| v * pi);
                        }
                        accumulate(&mut grads, *x, d);
                    }
                    if self.rg(*p) {
                        let mut d = Mat::zeros((n, 1));
                        for i in 0..n {
                            let mut acc = 0.0;
                            for j in 0..dim {
                                acc += g[[i, j]] * (xv[[i, j]] - mv[[0, j]]);
                            }
                            d[[i, 0]] = acc;
                        }
                        accumulate(&mut grads, *p, d);
                    }
                    if self.rg(*m) {
                        let mut d = Mat::zeros((1, dim));
                        for i in 0..n {
                            let q = 1.0 - pv[[i, 0]];
                            for j in 0..dim {
                                d[[0, j]] += q * g[[i, j]];
                            }
                        }
                        accumulate(&mut grads, *m, d);
                    }
                }
                Op::ReplaceRows { x, m, replaced } => {
                    if self.rg(*x) {
                        let mut d = g.clone();
                        for (i, &r) in replaced.iter().enumerate() {
                            if r {
                                d.row_mut(i).fill(0.0);
                            }
                        }
                        accumulate(&mut grads, *x, d);
                    }
                    if self.rg(*m) {
                        let mut d = Mat::zeros(self.shape(*m));
                        for (i, &r) in replaced.iter().enumerate() {
                            if r {
                                let mut row = d.row_mut(0);
                                row += &g.row(i);
                            }
                        }
                        accumulate(&mut grads, *m, d);
                    }
                }
                Op::SumSquaredDiff(a, b) => {
                    let scale = 2.0 * g[[0, 0]];
                    let diff = (self.value(*a) - self.value(*b)) * scale;
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, -&diff);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, diff);
                    }
                }
                Op::MaskedMeanSquaredDiff(a, b, rows) => {
                    let scale = 2.0 * g[[0, 0]] / rows.len() as f64;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut da = Mat::zeros(av.dim());
                    for &r in rows {
                        for j in 0..av.ncols() {
                            da[[r, j]] += scale * (av[[r, j]] - bv[[r, j]]);
                        }
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, -&da);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::AbsMeanDeviation(p, target) => {
                    let pv = self.value(*p);
                    let n = pv.len() as f64;
                    let mean = pv.sum() / n;
                    let sign = if mean > *target {
                        1.0
                    } else if mean < *target {
                        -1.0
                    } else {
                        0.0
                    };
                    let d = Mat::from_elem(pv.dim(), g[[0, 0]] * sign / n);
                    accumulate(&mut grads, *p, d);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
