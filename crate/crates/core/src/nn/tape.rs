//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. A call to
//! [`Tape::backward`] walks the record in reverse and returns the gradient
//! of a scalar (1x1) node with respect to every node that reaches it.
//!
//! ```
//! use intentlab::nn::tape::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(array![[1.0, 2.0]]);
//! let w = tape.leaf(array![[3.0], [4.0]]);
//! let y = tape.sum(tape.matmul(x, w));
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y)[[0, 0]], 11.0);
//! assert_eq!(grads.get(w).unwrap(), &array![[1.0], [2.0]]);
//! ```

use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Lower and upper clamp for probabilities inside the cross-entropy losses.
pub const PROB_CLAMP: f64 = 1e-12;

/// Norms below this are treated as this value when normalising rows.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    NormalizeRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: ndarray::ArrayView1<f64>) -> ndarray::Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut e = row.mapv(|x| (x - max).exp());
    let total = e.sum();
    e /= total;
    e
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&*self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) + &*self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) - &*self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) * &*self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting the `1 x m` row over the rows of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let out = &*self.value(a) + &*self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = &*self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let out = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols needs equal row counts")
        };
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        self.push(out, Op::SelectRows(a, rows.to_vec()))
    }

    /// Divides each row by its Euclidean norm (floored at [`NORM_FLOOR`]).
    pub fn normalize_rows(&self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let norm = row.dot(&row).sqrt().max(NORM_FLOOR);
            row /= norm;
        }
        self.push(out, Op::NormalizeRows(a))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// Max-shifted `log sum exp` of each row, as an `n x 1` column.
    pub fn logsumexp_rows(&self, a: Var) -> Var {
        let out = {
            let val = self.value(a);
            let col: Vec<f64> = val
                .rows()
                .into_iter()
                .map(|row| {
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    max + row.mapv(|x| (x - max).exp()).sum().ln()
                })
                .collect();
            Array2::from_shape_vec((col.len(), 1), col).expect("column shape")
        };
        self.push(out, Op::LogSumExpRows(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let out = {
            let val = self.value(a);
            Array2::from_elem((1, 1), val.sum() / val.len() as f64)
        };
        self.push(out, Op::Mean(a))
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against
    /// `targets` (row-major, same size as `logits`). The probability is
    /// clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce_with_logits(&self, logits: Var, targets: &[f64]) -> Var {
        let out = {
            let z = self.value(logits);
            assert_eq!(z.len(), targets.len(), "one target per logit");
            let mut out = z.clone();
            for (o, &y) in out.iter_mut().zip(targets) {
                let p = sigmoid(*o).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                *o = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
            out
        };
        self.push(out, Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Per-row cross-entropy of `softmax(logits)` against class indices, as
    /// an `n x 1` column. The target probability is clamped like
    /// [`Tape::bce_with_logits`].
    pub fn softmax_cross_entropy(&self, logits: Var, targets: &[usize]) -> Var {
        let out = {
            let z = self.value(logits);
            assert_eq!(z.nrows(), targets.len(), "one target per row");
            let col: Vec<f64> = z
                .rows()
                .into_iter()
                .zip(targets)
                .map(|(row, &t)| {
                    let p = softmax_row(row)[t].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    -p.ln()
                })
                .collect();
            Array2::from_shape_vec((col.len(), 1), col).expect("column shape")
        };
        self.push(out, Op::SoftmaxCrossEntropy(logits, targets.to_vec()))
    }

    /// Gradients of the 1x1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if lv.dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!("backward needs a 1x1 loss, got {:?}", lv.dim())));
        }
        if !lv[[0, 0]].is_finite() {
            return Err(Error::NonFiniteLoss(lv[[0, 0]]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    acc(&mut grads, *a, g.dot(&bv.t()));
                    acc(&mut grads, *b, av.t().dot(&g));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * &nodes[b.0].value);
                    acc(&mut grads, *b, &g * &nodes[a.0].value);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = nodes[p.0].value.ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SelectRows(a, rows) => {
                    let mut d = Array2::zeros(nodes[a.0].value.dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::NormalizeRows(a) => {
                    let x = &nodes[a.0].value;
                    let y = &node.value;
                    let mut d = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let xr = x.row(r);
                        let norm = xr.dot(&xr).sqrt();
                        if norm < NORM_FLOOR {
                            d.row_mut(r).assign(&(&g.row(r) / NORM_FLOOR));
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj = yr.dot(&gr);
                        let dr = (&gr - &(&yr * proj)) / norm;
                        d.row_mut(r).assign(&dr);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let cols = nodes[a.0].value.ncols();
                    let d = g.broadcast((g.nrows(), cols)).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::LogSumExpRows(a) => {
                    let x = &nodes[a.0].value;
                    let mut d = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let sm = softmax_row(x.row(r));
                        d.row_mut(r).assign(&(sm * g[[r, 0]]));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(nodes[a.0].value.dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let x = &nodes[a.0].value;
                    let d = Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64);
                    acc(&mut grads, *a, d);
                }
                Op::BceWithLogits(a, targets) => {
                    let z = &nodes[a.0].value;
                    let mut d = Array2::zeros(z.dim());
                    for ((d, (&z, &gi)), &y) in d.iter_mut().zip(z.iter().zip(g.iter())).zip(targets) {
                        let p = sigmoid(z);
                        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                            *d = gi * (p - y);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SoftmaxCrossEntropy(a, targets) => {
                    let z = &nodes[a.0].value;
                    let mut d = Array2::zeros(z.dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let sm = softmax_row(z.row(r));
                        if sm[t] > PROB_CLAMP && sm[t] < 1.0 - PROB_CLAMP {
                            let mut dr = sm;
                            dr[t] -= 1.0;
                            d.row_mut(r).assign(&(dr * g[[r, 0]]));
                        }
                    }
                    acc(&mut grads, *a, d);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` is unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}
