//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix; images and feature maps are flattened to
//! `(pixels × channels)` in row-major pixel order. Parameters are borrowed from a
//! [`ParamSet`] rather than copied onto the tape.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use super::params::ParamSet;

pub type Mat = Array2<f64>;

/// Sentinel in gather tables meaning "emit zero".
pub const GATHER_ZERO: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Gather(Var, Arc<[u32]>),
    WeightedMean(Var, Arc<Mat>),
    Bce(Var, f64, f64),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients indexed by parameter id; `None` for parameters the graph never touched.
pub type Grads = Vec<Option<Mat>>;

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    trainable: Option<&'p [bool]>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-6;

impl<'p> Graph<'p> {
    /// A graph that records gradients for parameters flagged in `trainable`.
    pub fn with_grad(params: &'p ParamSet, trainable: &'p [bool]) -> Self {
        assert_eq!(trainable.len(), params.len());
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            trainable: Some(trainable),
        }
    }

    /// An inference-only graph.
    pub fn inference(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            trainable: None,
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let needs_grad = self.trainable.is_some_and(|t| t[id]);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "add_row: shape mismatch");
        let out = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "mul_row: shape mismatch");
        let out = self.value(a) * self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * r);
            inv_std.push(r);
        }
        let ng = self.needs(a);
        self.push(out, Op::LayerNormRows(a, inv_std), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(ndarray::s![.., start..start + len]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(ndarray::s![start..start + len, ..]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape: element count mismatch");
        let data: Vec<f64> = src.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), data).expect("checked length");
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// `out.flat[i] = a.flat[table[i]]`, or zero where the table holds [`GATHER_ZERO`].
    pub fn gather(&mut self, a: Var, table: Arc<[u32]>, rows: usize, cols: usize) -> Var {
        assert_eq!(table.len(), rows * cols, "gather: table length mismatch");
        let src = self.value(a);
        let src = src.as_slice().expect("tape values are standard layout");
        let data: Vec<f64> = table
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i as usize] })
            .collect();
        let out = Array2::from_shape_vec((rows, cols), data).expect("checked length");
        let ng = self.needs(a);
        self.push(out, Op::Gather(a, table), ng)
    }

    /// `Σ a∘w / Σ w` as a `1×1` value.
    pub fn weighted_mean(&mut self, a: Var, weights: Arc<Mat>) -> Var {
        assert_eq!(self.shape(a), weights.dim(), "weighted_mean: shape mismatch");
        let total: f64 = weights.sum();
        assert!(total > 0.0, "weighted_mean: weights sum to zero");
        let normalized = Arc::new(weights.mapv(|w| w / total));
        let v = Zip::from(self.value(a)).and(&*normalized).fold(0.0, |acc, &x, &w| acc + x * w);
        let ng = self.needs(a);
        self.push(Array2::from_elem((1, 1), v), Op::WeightedMean(a, normalized), ng)
    }

    /// Binary cross-entropy `-p ln q - (1-p) ln(1-q)` with `q` clamped to `[eps, 1-eps]`.
    pub fn bce(&mut self, q: Var, target: f64, eps: f64) -> Var {
        let qv = self.scalar(q);
        let v = bce_value(target, qv, eps);
        let ng = self.needs(q);
        self.push(Array2::from_elem((1, 1), v), Op::Bce(q, target, eps), ng)
    }

    /// Reverse pass from the scalar `root`, returning parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        let mut out: Grads = vec![None; self.params.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        accumulate(&mut out[id], g);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.t().dot(self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = &g * self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = &g * self.value(*a);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MulRow(a, row) => {
                    if self.needs(*row) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        let ga = &g * self.value(*row);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, s) => {
                    self.acc(&mut grads, *a, g * *s);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = GELU_C * (1.0 + 3.0 * GELU_A * x * x) * (1.0 - t * t);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(Var(idx))).for_each(|d, &y| *d *= y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|d, &y| *d = y * (*d - dot));
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = self.value(Var(idx));
                    let mut ga = g;
                    for ((mut grow, yrow), &r) in ga.rows_mut().into_iter().zip(y.rows()).zip(inv_std) {
                        let n = grow.len() as f64;
                        let mean_g = grow.sum() / n;
                        let mean_gy: f64 = grow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum::<f64>() / n;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|d, &y| *d = r * (*d - mean_g - y * mean_gy));
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    let w = g.ncols();
                    ga.slice_mut(ndarray::s![.., *start..*start + w]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.needs(p) {
                            let gp = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                            self.acc(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    let h = g.nrows();
                    ga.slice_mut(ndarray::s![*start..*start + h, ..]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        if self.needs(p) {
                            let gp = g.slice(ndarray::s![offset..offset + h, ..]).to_owned();
                            self.acc(&mut grads, p, gp);
                        }
                        offset += h;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let data: Vec<f64> = g.iter().copied().collect();
                    let ga = Array2::from_shape_vec(shape, data).expect("same element count");
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gather(a, table) => {
                    let mut ga = Array2::<f64>::zeros(self.shape(*a));
                    {
                        let dst = ga.as_slice_mut().expect("fresh array");
                        for (&i, &d) in table.iter().zip(g.iter()) {
                            if i != GATHER_ZERO {
                                dst[i as usize] += d;
                            }
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::WeightedMean(a, w) => {
                    let ga = w.mapv(|wi| wi * g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Bce(q, p, eps) => {
                    let qv = self.scalar(*q);
                    let d = if qv > *eps && qv < 1.0 - *eps {
                        -p / qv + (1.0 - p) / (1.0 - qv)
                    } else {
                        0.0
                    };
                    self.acc(&mut grads, *q, Array2::from_elem((1, 1), d * g[[0, 0]]));
                }
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if self.needs(v) {
            accumulate(&mut grads[v.0], g);
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_value(p: f64, q: f64, eps: f64) -> f64 {
    let q = q.clamp(eps, 1.0 - eps);
    let mut v = 0.0;
    if p > 0.0 {
        v -= p * q.ln();
    }
    if p < 1.0 {
        v -= (1.0 - p) * (1.0 - q).ln();
    }
    v
}
