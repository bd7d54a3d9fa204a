//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes a node holding
//! its forward value and a record of its inputs; [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients into the leaves. Scalars are
//! `1 x 1` tensors and vectors are single columns.
//!
//! Only the primitives the models in this crate need are provided. There is
//! no general broadcasting: the single exception is [`Graph::add_row_bias`].

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Square(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    TruncNormLogPdf(Var, Arc<Tensor>, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape. Confined to one thread; build one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, needs)
    }

    /// Differentiable input; its gradient is kept after [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x (n x m) + bias (1 x m)` applied to every row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, m) = self.shape(x);
        if self.shape(bias) != (1, m) {
            return Err(Error::Shape(format!(
                "row bias {:?} for input with {m} columns",
                self.shape(bias)
            )));
        }
        let v = self.value(x) + self.value(bias);
        Ok(self.derived(v, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.derived(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        self.derived(v, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) + c;
        self.derived(v, Op::AddScalar(x), &[x])
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| 1.0 / a);
        self.derived(v, Op::Recip(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a * a);
        self.derived(v, Op::Square(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.derived(v, Op::Sigmoid(x), &[x])
    }

    /// `log(sigmoid(x))` without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(log_sigmoid);
        self.derived(v, Op::LogSigmoid(x), &[x])
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(elu);
        self.derived(v, Op::Elu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        self.derived(v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::ln);
        self.derived(v, Op::Log(x), &[x])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|a| a.clamp(lo, hi));
        self.derived(v, Op::Clamp(x, lo, hi), &[x])
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.derived(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let v = Array2::from_elem((1, 1), self.value(x).sum() / n);
        self.derived(v, Op::Mean(x), &[x])
    }

    /// Sum across columns: `(n x m) -> (n x 1)`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        // Left-to-right per row, matching a plain iterator sum.
        let src = self.value(x);
        let mut v = Array2::zeros((src.nrows(), 1));
        for (o, row) in v.iter_mut().zip(src.rows()) {
            *o = row.iter().sum();
        }
        self.derived(v, Op::RowSum(x), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let rows = self.shape(*first).0;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::Shape(format!(
                "concat rows {rows} vs {}",
                self.shape(*bad).0
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.derived(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (_, m) = self.shape(x);
        if start + len > m {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {m} columns",
                start + len
            )));
        }
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        Ok(self.derived(v, Op::SliceCols(x, start), &[x]))
    }

    /// Row `k` of the output is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (n, m) = self.shape(x);
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather row {bad} of {n}")));
        }
        let src = self.value(x);
        let mut v = Array2::zeros((index.len(), m));
        for (mut row, &i) in v.rows_mut().into_iter().zip(index.iter()) {
            row.assign(&src.row(i));
        }
        Ok(self.derived(v, Op::GatherRows(x, index), &[x]))
    }

    /// Output row `s` is the sum of the rows `k` of `x` with `segment[k] == s`.
    pub fn segment_sum(&mut self, x: Var, segment: Arc<[usize]>, segments: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if segment.len() != n {
            return Err(Error::Shape(format!(
                "segment ids {} for {n} rows",
                segment.len()
            )));
        }
        if let Some(bad) = segment.iter().find(|&&s| s >= segments) {
            return Err(Error::Shape(format!("segment {bad} of {segments}")));
        }
        let src = self.value(x);
        let mut v = Array2::zeros((segments, m));
        for (row, &s) in src.rows().into_iter().zip(segment.iter()) {
            let mut out = v.row_mut(s);
            out += &row;
        }
        Ok(self.derived(v, Op::SegmentSum(x, segment), &[x]))
    }

    /// Log density of `observed` under a Normal with mean `mean` and standard
    /// deviation `sigma`, truncated to `[0, 1]`. Elementwise.
    pub fn trunc_norm_log_pdf(&mut self, mean: Var, observed: Arc<Tensor>, sigma: f64) -> Result<Var> {
        if self.shape(mean) != observed.dim() {
            return Err(Error::Shape(format!(
                "truncated normal mean {:?} vs responses {:?}",
                self.shape(mean),
                observed.dim()
            )));
        }
        let mut v = Array2::zeros(observed.dim());
        Zip::from(&mut v)
            .and(self.value(mean))
            .and(observed.as_ref())
            .for_each(|o, &mu, &r| *o = trunc_norm_log_pdf(r, mu, sigma));
        Ok(self.derived(v, Op::TruncNormLogPdf(mean, observed, sigma), &[mean]))
    }

    /// Propagate d(root)/d(node) to every leaf. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from non-scalar root {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[idx] {
                        Some(acc) => *acc += &g,
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    self.send(&mut grads, *a, g.clone());
                    self.send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, *b, -&g);
                    self.send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    self.send(&mut grads, *a, ga);
                    self.send(&mut grads, *b, gb);
                }
                Op::AddRowBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.send(&mut grads, *b, gb);
                    self.send(&mut grads, *x, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    self.send(&mut grads, *a, ga);
                    self.send(&mut grads, *b, gb);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    self.send(&mut grads, *x, g * c);
                }
                Op::AddScalar(x) => self.send(&mut grads, *x, g),
                Op::Recip(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= -y * y);
                    self.send(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &a| *gi *= 2.0 * a);
                    self.send(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= y * (1.0 - y));
                    self.send(&mut grads, *x, gx);
                }
                Op::LogSigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &a| *gi *= sigmoid(-a));
                    self.send(&mut grads, *x, gx);
                }
                Op::Elu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &a| {
                            if a <= 0.0 {
                                *gi *= a.exp()
                            }
                        });
                    self.send(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(&node.value).for_each(|gi, &y| *gi *= y);
                    self.send(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &a| *gi /= a);
                    self.send(&mut grads, *x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &a| {
                            if a < lo || a > hi {
                                *gi = 0.0
                            }
                        });
                    self.send(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.shape(*x), g[[0, 0]]);
                    self.send(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let shape = self.shape(*x);
                    let n = (shape.0 * shape.1).max(1) as f64;
                    let gx = Array2::from_elem(shape, g[[0, 0]] / n);
                    self.send(&mut grads, *x, gx);
                }
                Op::RowSum(x) => {
                    let shape = self.shape(*x);
                    let gx = g
                        .broadcast(shape)
                        .expect("column broadcast")
                        .to_owned();
                    self.send(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let w = self.shape(p).1;
                        let gp = g.slice(s![.., start..start + w]).to_owned();
                        start += w;
                        self.send(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(x, start) => {
                    let start = *start;
                    let mut gx = Array2::zeros(self.shape(*x));
                    let w = g.ncols();
                    gx.slice_mut(s![.., start..start + w]).assign(&g);
                    self.send(&mut grads, *x, gx);
                }
                Op::GatherRows(x, index) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (row, &i) in g.rows().into_iter().zip(index.iter()) {
                        let mut out = gx.row_mut(i);
                        out += &row;
                    }
                    self.send(&mut grads, *x, gx);
                }
                Op::SegmentSum(x, segment) => {
                    let (n, m) = self.shape(*x);
                    let mut gx = Array2::zeros((n, m));
                    for (mut row, &sgm) in gx.rows_mut().into_iter().zip(segment.iter()) {
                        row.assign(&g.row(sgm));
                    }
                    self.send(&mut grads, *x, gx);
                }
                Op::TruncNormLogPdf(mean, observed, sigma) => {
                    let sigma = *sigma;
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*mean))
                        .and(observed.as_ref())
                        .for_each(|gi, &mu, &r| *gi *= trunc_norm_log_pdf_dmean(r, mu, sigma));
                    self.send(&mut grads, *mean, gx);
                }
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].needs_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[inline]
pub fn normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `log(Phi(b) - Phi(a))` for `a < b`, evaluated in whichever tail keeps
/// precision.
fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        // Upper tail: Phi(b) - Phi(a) = Q(a) - Q(b).
        (normal_cdf(-a) - normal_cdf(-b)).ln()
    } else {
        (normal_cdf(b) - normal_cdf(a)).ln()
    }
}

/// Truncated-normal log density on `[0, 1]`.
pub fn trunc_norm_log_pdf(r: f64, mean: f64, sigma: f64) -> f64 {
    let z = (r - mean) / sigma;
    let lo = -mean / sigma;
    let hi = (1.0 - mean) / sigma;
    normal_log_pdf(z) - sigma.ln() - log_normal_mass(lo, hi)
}

/// Derivative of [`trunc_norm_log_pdf`] with respect to the mean.
pub fn trunc_norm_log_pdf_dmean(r: f64, mean: f64, sigma: f64) -> f64 {
    let z = (r - mean) / sigma;
    let lo = -mean / sigma;
    let hi = (1.0 - mean) / sigma;
    let log_mass = log_normal_mass(lo, hi);
    // d/dmean log Z = (phi(lo) - phi(hi)) / (sigma Z)
    let dlog_mass = ((normal_log_pdf(lo) - log_mass).exp() - (normal_log_pdf(hi) - log_mass).exp()) / sigma;
    z / sigma - dlog_mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(g: &mut Graph, x: f64) -> Var {
        g.leaf(array![[x]])
    }

    #[test]
    fn product_rule_on_constants() {
        let mut g = Graph::new();
        let x = scalar(&mut g, 2.0);
        let y = scalar(&mut g, 3.0);
        let z = g.mul(x, y).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 3.0);
        assert_eq!(g.grad(y).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut g = Graph::new();
        let x = scalar(&mut g, 0.0);
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(array![[1.0, 2.0]]);
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn leaf_reused_twice_accumulates() {
        let mut g = Graph::new();
        let x = scalar(&mut g, 1.5);
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap(); // 2x^2
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 6.0);
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 12.0);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = scalar(&mut g, 1.0);
        let c = g.scalar(4.0);
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.leaf(Array2::zeros((2, 3)));
        let b = g.leaf(Array2::zeros((3, 2)));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.matmul(a, b).is_ok());
        let bias = g.leaf(Array2::zeros((1, 2)));
        assert!(g.add_row_bias(a, bias).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
        assert!(g.gather_rows(a, Arc::from(vec![0, 2])).is_err());
        assert!(g.segment_sum(a, Arc::from(vec![0, 1]), 2).is_ok());
        assert!(g.segment_sum(a, Arc::from(vec![0, 2]), 2).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn trunc_norm_normalizer_extreme_means() {
        // Far outside the support the mass is tiny but must stay finite.
        for &mu in &[-3.0, 4.0] {
            let v = trunc_norm_log_pdf(0.5, mu, 0.1);
            assert!(v.is_finite(), "mu {mu}: {v}");
            assert!(trunc_norm_log_pdf_dmean(0.5, mu, 0.1).is_finite());
        }
    }
}
