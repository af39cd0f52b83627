//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; because nodes can only reference earlier nodes,
//! the tape is always in topological order and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! ```
//! use kws::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(array![[3.0, 4.0]]);
//! let y = tape.l2_normalize_rows(x).unwrap();
//! assert_eq!(tape.value(y), &array![[0.6, 0.8]]);
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert!(grads.get(x).is_some());
//! ```

mod optim;

pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

/// Scalar type the tape can run on: `f64` for gradient checks, `f32` for training.
pub trait Real:
    Float + FromPrimitive + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + LinalgScalar + ScalarOperand + Debug + Display + Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("row {row} has zero norm in {op}")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("backward needs a 1x1 output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("tape is empty")]
    EmptyTape,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    L2NormalizeRows(Var, Vec<T>),
    Scale(Var, T),
    Affine(Var, Var, Var),
    WeightedBce {
        logits: Var,
        labels: Array2<T>,
        weights: Array2<T>,
        total_weight: T,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Array2<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when it did not influence the output.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Array2<T> {
        self.get(var).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Array2<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn check_finite<T: Real>(op: &'static str, a: &Array2<T>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2<T> {
        &self.nodes[var.0].value
    }

    /// First entry of a node; convenient for 1x1 results.
    pub fn scalar(&self, var: Var) -> T {
        self.nodes[var.0].value[[0, 0]]
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let out = self.value(a).dot(self.value(b));
        self.push_checked("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, the natural layout for `x · Wᵀ` with `W` stored as (out × in).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(AutodiffError::ShapeMismatch { op: "matmul_t", lhs: sa, rhs: sb });
        }
        let out = self.value(a).dot(&self.value(b).t());
        self.push_checked("matmul_t", out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push_checked("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push_checked("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(AutodiffError::ShapeMismatch { op: "add_row", lhs: sa, rhs: sr });
        }
        let out = self.value(a) + self.value(row);
        self.push_checked("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push_checked("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(sigmoid);
        self.push_checked("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(T::tanh);
        self.push_checked("tanh", out, Op::Tanh(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyTape)?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        self.push_checked("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `[start, start + width)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start + width > sa.1 || width == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: sa,
                rhs: (start, width),
            });
        }
        let out = self
            .value(a)
            .slice(ndarray::s![.., start..start + width])
            .to_owned();
        self.push_checked("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= sa.0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "select_rows",
                lhs: sa,
                rhs: (bad, 0),
            });
        }
        let out = self.value(a).select(Axis(0), rows);
        self.push_checked("select_rows", out, Op::SelectRows(a, rows.to_vec()), &[a])
    }

    /// Mean of all entries as a 1×1 value.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = T::from_usize(v.len()).unwrap();
        let out = Array2::from_elem((1, 1), v.sum() / n);
        self.push_checked("mean", out, Op::Mean(a), &[a])
    }

    /// Sum of all entries as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push_checked("sum", out, Op::Sum(a), &[a])
    }

    /// Scales every row to unit L2 norm. Rows with norm below `1e-12` are an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let eps = T::from_f64(1e-12).unwrap();
        let mut norms = Vec::with_capacity(v.nrows());
        for (i, row) in v.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > eps) {
                return Err(AutodiffError::ZeroNorm { op: "l2_normalize_rows", row: i });
            }
            norms.push(n);
        }
        let mut out = v.clone();
        for (mut row, &n) in out.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|x| x / n);
        }
        self.push_checked("l2_normalize_rows", out, Op::L2NormalizeRows(a, norms), &[a])
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a) * c;
        self.push_checked("scale", out, Op::Scale(a, c), &[a])
    }

    /// `w · x + b` with learnable 1×1 `w` and `b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for s in [w, b] {
            if self.shape(s) != (1, 1) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "affine",
                    lhs: self.shape(x),
                    rhs: self.shape(s),
                });
            }
        }
        let (wv, bv) = (self.scalar(w), self.scalar(b));
        let out = self.value(x).mapv(|v| wv * v + bv);
        self.push_checked("affine", out, Op::Affine(x, w, b), &[x, w, b])
    }

    /// Weighted binary cross-entropy on logits, normalised by the total weight:
    /// `Σ wᵢⱼ·bce(zᵢⱼ, yᵢⱼ) / Σ wᵢⱼ`.
    pub fn weighted_bce_with_logits(
        &mut self,
        logits: Var,
        labels: Array2<T>,
        weights: Array2<T>,
    ) -> Result<Var> {
        let sz = self.shape(logits);
        for other in [labels.dim(), weights.dim()] {
            if other != sz {
                return Err(AutodiffError::ShapeMismatch {
                    op: "weighted_bce_with_logits",
                    lhs: sz,
                    rhs: other,
                });
            }
        }
        let total_weight = weights.sum();
        if !(total_weight > T::zero()) {
            return Err(AutodiffError::NonFinite { op: "weighted_bce_with_logits" });
        }
        let mut acc = T::zero();
        Zip::from(self.value(logits))
            .and(&labels)
            .and(&weights)
            .for_each(|&z, &y, &w| acc += w * (softplus(z) - y * z));
        let out = Array2::from_elem((1, 1), acc / total_weight);
        self.push_checked(
            "weighted_bce_with_logits",
            out,
            Op::WeightedBce {
                logits,
                labels,
                weights,
                total_weight,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a 1×1 output seeded with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NotScalar { rows, cols });
        }
        self.backward_with(loss, Array2::ones((1, 1)))
    }

    /// Reverse sweep from an arbitrary output with an explicit upstream gradient.
    pub fn backward_with(&self, output: Var, seed: Array2<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if seed.dim() != self.shape(output) {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward",
                lhs: self.shape(output),
                rhs: seed.dim(),
            });
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<T>>], var: Var, g: Array2<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.mapv(|x| -x));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[row.0].requires_grad {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d = *d * y * (T::one() - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= T::one() - y * y);
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.nodes[p.0].requires_grad {
                        let part = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        self.accumulate(grads, *p, part);
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.shape(*a));
                let w = g.ncols();
                d.slice_mut(ndarray::s![.., *start..*start + w]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (src, &dst) in rows.iter().enumerate() {
                    let mut r = d.row_mut(dst);
                    r += &g.row(src);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let sa = self.shape(*a);
                let n = T::from_usize(sa.0 * sa.1).unwrap();
                self.accumulate(grads, *a, Array2::from_elem(sa, g[[0, 0]] / n));
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Array2::from_elem(self.shape(*a), g[[0, 0]]));
            }
            Op::L2NormalizeRows(a, norms) => {
                // dx = (dy - y·(y·dy)) / ‖x‖ per row
                let y = &node.value;
                let mut d = g.clone();
                for ((mut drow, yrow), &n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                    let proj = yrow.dot(&drow);
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|dv, &yv| *dv = (*dv - yv * proj) / n);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g * *c);
            }
            Op::Affine(x, w, b) => {
                let wv = self.scalar(*w);
                if self.nodes[x.0].requires_grad {
                    self.accumulate(grads, *x, g * wv);
                }
                if self.nodes[w.0].requires_grad {
                    let dw = (g * self.value(*x)).sum();
                    self.accumulate(grads, *w, Array2::from_elem((1, 1), dw));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, Array2::from_elem((1, 1), g.sum()));
                }
            }
            Op::WeightedBce {
                logits,
                labels,
                weights,
                total_weight,
            } => {
                let scale = g[[0, 0]] / *total_weight;
                let mut d = Array2::zeros(self.shape(*logits));
                Zip::from(&mut d)
                    .and(self.value(*logits))
                    .and(labels)
                    .and(weights)
                    .for_each(|d, &z, &y, &w| *d = scale * w * (sigmoid(z) - y));
                self.accumulate(grads, *logits, d);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over a set of arrays.
pub fn global_norm<'a, T: Real>(arrays: impl IntoIterator<Item = &'a Array2<T>>) -> T {
    arrays
        .into_iter()
        .map(|a| a.iter().map(|&x| x * x).sum::<T>())
        .sum::<T>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.param(array![[0.0]]);
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.scalar(y), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn normalize_three_four() {
        let mut t = Tape::<f64>::new();
        let x = t.param(array![[3.0, 4.0]]);
        let y = t.l2_normalize_rows(x).unwrap();
        assert_abs_diff_eq!(t.value(y)[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(y)[[0, 1]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Array2::<f64>::ones((3, 5)));
    }

    #[test]
    fn product_of_scalars() {
        let mut t = Tape::<f64>::new();
        let x = t.param(array![[2.5]]);
        let y = t.param(array![[-4.0]]);
        let p = t.mul(x, y).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], -4.0);
        assert_eq!(g.get(y).unwrap()[[0, 0]], 2.5);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Array2::zeros((2, 2)));
        let y = t.tanh(x).unwrap();
        assert_eq!(
            t.backward(y).unwrap_err(),
            AutodiffError::NotScalar { rows: 2, cols: 2 }
        );
        let empty = Tape::<f64>::new();
        assert_eq!(empty.backward(Var(0)).unwrap_err(), AutodiffError::EmptyTape);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Array2::zeros((2, 3)));
        let b = t.param(Array2::zeros((2, 3)));
        assert!(matches!(t.matmul(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        let r = t.param(Array2::zeros((1, 2)));
        assert!(matches!(t.add_row(a, r), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(t.matmul_t(a, b).is_ok());
    }

    #[test]
    fn non_finite_is_detected() {
        let mut t = Tape::<f64>::new();
        let a = t.param(array![[1e308, 1e308]]);
        assert_eq!(
            t.add(a, a).unwrap_err(),
            AutodiffError::NonFinite { op: "add" }
        );
    }

    #[test]
    fn zero_row_cannot_be_normalized() {
        let mut t = Tape::<f64>::new();
        let a = t.param(array![[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(
            t.l2_normalize_rows(a).unwrap_err(),
            AutodiffError::ZeroNorm { op: "l2_normalize_rows", row: 1 }
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(array![[2.0]]);
        let x = t.param(array![[3.0]]);
        let y = t.mul(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let mut t = Tape::<f64>::new();
        let z = t.param(array![[800.0, -800.0]]);
        let l = t
            .weighted_bce_with_logits(z, array![[1.0, 0.0]], array![[1.0, 1.0]])
            .unwrap();
        assert!(t.scalar(l).abs() < 1e-300);
    }
}
