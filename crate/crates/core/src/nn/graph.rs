//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its value. [`Graph::backward`] walks the nodes in reverse and
//! returns the gradient of a scalar output with respect to every node that
//! depends on a trainable leaf.

use indexmap::IndexMap;
use ndarray::{s, Array2, Axis, Zip};

use crate::data::axis_angle::wrap_factor;
use crate::error::{Error, Result};
use crate::nn::params::ParameterStore;

pub type Mat = Array2<f64>;

/// Norms below this are treated as zero by [`Graph::row_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    RepeatRows(Var),
    Sum(Var),
    Mean(Var),
    MeanCols(Var),
    MeanRows(Var),
    RowNormalize(Var),
    LayerNorm(Var, f64),
    WrapAxisAngle(Var),
    SrmMix(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
    tracked: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, Var>,
    no_grad: bool,
    frozen_prefixes: Vec<String>,
}

fn check_same_shape(ctx: &str, a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(ctx, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which every parameter binds as a constant.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    /// Parameters whose names start with `prefix` bind as constants.
    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen_prefixes.push(prefix.into());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let tracked = match &op {
            Op::Leaf => false,
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].tracked),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::SrmMix(a, b) => self.nodes[a.0].tracked || self.nodes[b.0].tracked,
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::RepeatRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanCols(a)
            | Op::MeanRows(a)
            | Op::RowNormalize(a)
            | Op::LayerNorm(a, _)
            | Op::WrapAxisAngle(a) => self.nodes[a.0].tracked,
        };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Mat) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].tracked = true;
        v
    }

    /// Binds a named parameter. Parameters of a frozen store, of an inference
    /// graph or under a frozen prefix become constants.
    /// Repeated calls with the same name return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store.value(name)?.clone();
        let frozen = self.no_grad
            || store.is_frozen()
            || self.frozen_prefixes.iter().any(|p| name.starts_with(p.as_str()));
        let v = if frozen {
            self.constant(value)
        } else {
            self.variable(value)
        };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// The single entry of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("lhs cols == rhs rows ({})", va.ncols()),
                vb.nrows(),
            ));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `a + row` with the 1×c `row` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::shape("add_row", format!("(1, {})", va.ncols()), format!("{:?}", vr.dim())));
        }
        let out = va + vr;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `a ⊙ row` with the 1×c `row` broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::shape("mul_row", format!("(1, {})", va.ncols()), format!("{:?}", vr.dim())));
        }
        let out = va * vr;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// `a ⊙ col` with the r×1 `col` broadcast over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(Error::shape("mul_col", format!("({}, 1)", va.nrows()), format!("{:?}", vc.dim())));
        }
        let out = va * vc;
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) + s;
        self.push(out, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; gradient is zero wherever the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape("concat_cols", "equal row counts", e))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape("concat_rows", "equal column counts", e))?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.ncols() {
            return Err(Error::shape("slice_cols", format!("<= {} columns", va.ncols()), start + len));
        }
        let out = va.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.nrows() {
            return Err(Error::shape("slice_rows", format!("<= {} rows", va.nrows()), start + len));
        }
        let out = va.slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Tiles a 1×c row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let va = self.value(a);
        if va.nrows() != 1 {
            return Err(Error::shape("repeat_rows", "1 row", va.nrows()));
        }
        let out = va.broadcast((n, va.ncols())).expect("row broadcast").to_owned();
        Ok(self.push(out, Op::RepeatRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Array2::from_elem((1, 1), va.sum() / va.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Per-row mean: r×c → r×1.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1));
        self.push(out, Op::MeanCols(a))
    }

    /// Per-column mean: r×c → 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Scales every row to unit Euclidean norm; rows with norm below
    /// [`NORM_FLOOR`] map to zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n < NORM_FLOOR {
                row.fill(0.0);
            } else {
                row.mapv_inplace(|x| x / n);
            }
        }
        self.push(out, Op::RowNormalize(a))
    }

    /// Normalizes every row to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mu = row.sum() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mu) / sd);
        }
        self.push(out, Op::LayerNorm(a, eps))
    }

    /// Canonicalizes each consecutive column triple as an axis-angle vector.
    pub fn wrap_axis_angle(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        if out.ncols() % 3 != 0 {
            return Err(Error::shape("wrap_axis_angle", "columns divisible by 3", out.ncols()));
        }
        for mut row in out.rows_mut() {
            for j in (0..row.len()).step_by(3) {
                let theta = (row[j] * row[j] + row[j + 1] * row[j + 1] + row[j + 2] * row[j + 2]).sqrt();
                let (f, _) = wrap_factor(theta);
                if f != 1.0 {
                    row[j] *= f;
                    row[j + 1] *= f;
                    row[j + 2] *= f;
                }
            }
        }
        Ok(self.push(out, Op::WrapAxisAngle(a)))
    }

    /// Row-wise spatial mixing: for every row `t`, `f_t · softmax_rows(δ_tᵀ f_t)`
    /// where `δ` and `f` are both T×C. Equivalent to composing the outer
    /// product, row softmax and row-vector product per row, in one node.
    pub fn srm_mix(&mut self, delta: Var, f: Var) -> Result<Var> {
        check_same_shape("srm_mix", self.value(delta), self.value(f))?;
        let (d, x) = (self.value(delta), self.value(f));
        let mut out = Array2::zeros(x.dim());
        let mut p = vec![0.0; x.ncols()];
        for ((drow, xrow), mut orow) in d.rows().into_iter().zip(x.rows()).zip(out.rows_mut()) {
            for (i, &di) in drow.iter().enumerate() {
                srm_softmax_row(di, xrow, &mut p);
                let fi = xrow[i];
                for (o, pj) in orow.iter_mut().zip(&p) {
                    *o += fi * pj;
                }
            }
        }
        Ok(self.push(out, Op::SrmMix(delta, f)))
    }

    /// Backpropagates from a 1×1 output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).dim() != (1, 1) {
            return Err(Error::shape("backward", "(1, 1)", format!("{:?}", self.value(out).dim())));
        }
        self.backward_with_seed(out, Array2::ones((1, 1)))
    }

    /// Vector-Jacobian product: backpropagates `seed` (shaped like `out`).
    pub fn backward_with_seed(&self, out: Var, seed: Mat) -> Result<Gradients> {
        check_same_shape("backward seed", self.value(out), &seed)?;
        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let nodes = &self.nodes;
        let tracked = |v: &Var| nodes[v.0].tracked;
        let mut acc = |v: Var, d: Mat| {
            if !nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if tracked(a) {
                    acc(*a, g.dot(&nodes[b.0].value.t()));
                }
                if tracked(b) {
                    acc(*b, nodes[a.0].value.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if tracked(a) {
                    acc(*a, g * &nodes[b.0].value);
                }
                if tracked(b) {
                    acc(*b, g * &nodes[a.0].value);
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                if tracked(r) {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, r) => {
                if tracked(a) {
                    acc(*a, g * &nodes[r.0].value);
                }
                if tracked(r) {
                    acc(*r, (g * &nodes[a.0].value).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, c) => {
                if tracked(a) {
                    acc(*a, g * &nodes[c.0].value);
                }
                if tracked(c) {
                    acc(*c, (g * &nodes[a.0].value).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, s) => acc(*a, g * *s),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&nodes[a.0].value).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g * &y.mapv(|y| y * (1.0 - y)));
            }
            Op::Log(a) => acc(*a, g / &nodes[a.0].value),
            Op::Abs(a) => {
                let sign = nodes[a.0].value.mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc(*a, g * &sign);
            }
            Op::Square(a) => acc(*a, g * &nodes[a.0].value.mapv(|x| 2.0 * x)),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&nodes[a.0].value).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = y * g;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y * dot);
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = nodes[p.0].value.ncols();
                    if tracked(p) {
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = nodes[p.0].value.nrows();
                    if tracked(p) {
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(nodes[a.0].value.dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(nodes[a.0].value.dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::RepeatRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::Sum(a) => acc(*a, Array2::from_elem(nodes[a.0].value.dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let dim = nodes[a.0].value.dim();
                let n = (dim.0 * dim.1) as f64;
                acc(*a, Array2::from_elem(dim, g[[0, 0]] / n));
            }
            Op::MeanCols(a) => {
                let dim = nodes[a.0].value.dim();
                let scaled = g / dim.1 as f64;
                acc(*a, scaled.broadcast(dim).expect("column broadcast").to_owned());
            }
            Op::MeanRows(a) => {
                let dim = nodes[a.0].value.dim();
                let scaled = g / dim.0 as f64;
                acc(*a, scaled.broadcast(dim).expect("row broadcast").to_owned());
            }
            Op::RowNormalize(a) => {
                let x = &nodes[a.0].value;
                let y = &node.value;
                let mut d = Array2::zeros(x.dim());
                for ((mut drow, xrow), (yrow, grow)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(x.rows())
                    .zip(y.rows().into_iter().zip(g.rows()))
                {
                    let n = xrow.dot(&xrow).sqrt();
                    if n < NORM_FLOOR {
                        continue;
                    }
                    let yg = yrow.dot(&grow);
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .and(&grow)
                        .for_each(|d, &y, &g| *d = (g - y * yg) / n);
                }
                acc(*a, d);
            }
            Op::LayerNorm(a, eps) => {
                let x = &nodes[a.0].value;
                let y = &node.value;
                let mut d = Array2::zeros(x.dim());
                for ((mut drow, xrow), (yrow, grow)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(x.rows())
                    .zip(y.rows().into_iter().zip(g.rows()))
                {
                    let n = xrow.len() as f64;
                    let mu = xrow.sum() / n;
                    let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let sd = (var + eps).sqrt();
                    let g_mean = grow.sum() / n;
                    let gy_mean = grow.dot(&yrow) / n;
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .and(&grow)
                        .for_each(|d, &y, &g| *d = (g - g_mean - y * gy_mean) / sd);
                }
                acc(*a, d);
            }
            Op::WrapAxisAngle(a) => {
                let x = &nodes[a.0].value;
                let mut d = g.clone();
                for (mut drow, xrow) in d.rows_mut().into_iter().zip(x.rows()) {
                    for j in (0..xrow.len()).step_by(3) {
                        let v = [xrow[j], xrow[j + 1], xrow[j + 2]];
                        let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        let (f, k) = wrap_factor(theta);
                        if k == 0.0 {
                            continue;
                        }
                        let up = [drow[j], drow[j + 1], drow[j + 2]];
                        let vg = v[0] * up[0] + v[1] * up[1] + v[2] * up[2];
                        let c = std::f64::consts::TAU * k / theta.powi(3) * vg;
                        for m in 0..3 {
                            drow[j + m] = f * up[m] + c * v[m];
                        }
                    }
                }
                acc(*a, d);
            }
            Op::SrmMix(delta, f) => {
                let (dv, xv) = (&nodes[delta.0].value, &nodes[f.0].value);
                let mut gd = Array2::zeros(dv.dim());
                let mut gf = Array2::zeros(xv.dim());
                let c = xv.ncols();
                let mut p = vec![0.0; c];
                for t in 0..xv.nrows() {
                    let (drow, xrow, grow) = (dv.row(t), xv.row(t), g.row(t));
                    for i in 0..c {
                        srm_softmax_row(drow[i], xrow, &mut p);
                        let pg: f64 = p.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        gf[[t, i]] += pg;
                        // Gradient of the softmax logits a_ij = δ_i f_j.
                        let mut dd = 0.0;
                        for j in 0..c {
                            let da = p[j] * xrow[i] * (grow[j] - pg);
                            dd += da * xrow[j];
                            gf[[t, j]] += da * drow[i];
                        }
                        gd[[t, i]] += dd;
                    }
                }
                if tracked(delta) {
                    acc(*delta, gd);
                }
                if tracked(f) {
                    acc(*f, gf);
                }
            }
        }
    }

    /// Adds the gradients of every parameter bound from `store` into the
    /// store's gradient buffers.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParameterStore) -> Result<()> {
        if store.is_frozen() {
            return Ok(());
        }
        for (name, var) in &self.params {
            if !store.contains(name) {
                continue;
            }
            if let Some(g) = grads.wrt(*var) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

fn srm_softmax_row(di: f64, x: ndarray::ArrayView1<f64>, p: &mut [f64]) {
    let max = x.iter().map(|xj| di * xj).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (pj, xj) in p.iter_mut().zip(x.iter()) {
        *pj = (di * xj - max).exp();
        sum += *pj;
    }
    for pj in p.iter_mut() {
        *pj /= sum;
    }
}
