//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Var`] is a cheap
//! handle into it. Nodes are appended in evaluation order, so walking the tape
//! backwards is a valid reverse topological order and the graph is acyclic by
//! construction.
//!
//! Trainable values live in a [`ParamStore`] that outlives the tape. A model
//! builds a fresh tape per step, pulls parameters in with [`Tape::param`], and
//! [`Tape::backward`] *adds* each parameter's gradient into the store. A
//! parameter used on several paths therefore receives the sum of all path
//! contributions.

mod params;

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

pub use params::{ParamId, ParamStore, Parameter};

use crate::error::{Result, SagaError};
use crate::sparse::LinearOperator;

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Apply(Arc<dyn LinearOperator>, Var),
    Gram(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    MulConst(Var, Arc<Array2<f64>>),
    Transpose(Var),
    RowSoftmax(Var),
    AddRowBias(Var, Var),
    SelectCol(Var, usize),
    ScaleRows(Var, Var),
    HStack(Vec<Var>),
    Sum(Var),
    PairDots(Var, Arc<Vec<(usize, usize)>>),
    MaskedMse {
        pred: Var,
        target: Arc<Array2<f64>>,
        rows: Arc<Vec<bool>>,
        count: f64,
    },
    WeightedBce {
        pred: Var,
        target: Arc<Array2<f64>>,
        weight: Arc<Array2<f64>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        rows: Arc<Vec<usize>>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to the leaf and parameter nodes of a
/// tape. Intermediate gradients are consumed during the sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// `None` when `v` does not influence the differentiated scalar.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> SagaError {
    SagaError::shape(op, format!("{a:?} vs {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy at the clamped probability. Binary targets take a
/// single log.
fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if t == 1.0 {
        -p.ln()
    } else if t == 0.0 {
        -(1.0 - p).ln()
    } else {
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    }
}

fn bce_grad(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if t == 1.0 {
        -1.0 / p
    } else if t == 0.0 {
        1.0 / (1.0 - p)
    } else {
        -t / p + (1.0 - t) / (1.0 - p)
    }
}

fn check_finite(a: &Array2<f64>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SagaError::NonFinite(what))
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A value no gradient flows into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A differentiable input not tied to a parameter store.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter onto the tape. Repeated calls with the same id return
    /// the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `op · t` for a constant left operator.
    pub fn apply(&mut self, op: Arc<dyn LinearOperator>, t: Var) -> Result<Var> {
        let st = self.shape(t);
        if op.ncols() != st.0 {
            return Err(shape_err("apply", (op.nrows(), op.ncols()), st));
        }
        let v = op.apply(self.value(t).view());
        let rg = self.rg(t);
        Ok(self.push(v, Op::Apply(op, t), rg))
    }

    /// `a · aᵀ`, exactly symmetric.
    pub fn gram(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut g = x.dot(&x.t());
        let n = g.nrows();
        for i in 0..n {
            for j in 0..i {
                g[[i, j]] = g[[j, i]];
            }
        }
        let rg = self.rg(a);
        self.push(g, Op::Gram(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(v, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    /// `s · t` for a 1×1 node `s`.
    pub fn scale_by(&mut self, s: Var, t: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", self.shape(s), (1, 1)));
        }
        let v = self.value(t) * self.scalar(s);
        let rg = self.rg(s) || self.rg(t);
        Ok(self.push(v, Op::ScaleBy(s, t), rg))
    }

    /// Elementwise product with a constant (dropout masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Arc<Array2<f64>>) -> Result<Var> {
        if self.shape(a) != c.dim() {
            return Err(shape_err("mul_const", self.shape(a), c.dim()));
        }
        let v = self.value(a) * &*c;
        let rg = self.rg(a);
        Ok(self.push(v, Op::MulConst(a, c), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// Softmax across each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let rg = self.rg(a);
        self.push(v, Op::RowSoftmax(a), rg)
    }

    /// Adds the 1×k row `b` to every row of `t`.
    pub fn add_row_bias(&mut self, t: Var, b: Var) -> Result<Var> {
        let (st, sb) = (self.shape(t), self.shape(b));
        if sb != (1, st.1) {
            return Err(shape_err("add_row_bias", st, sb));
        }
        let v = self.value(t) + self.value(b);
        let rg = self.rg(t) || self.rg(b);
        Ok(self.push(v, Op::AddRowBias(t, b), rg))
    }

    /// Column `j` as an N×1 node.
    pub fn select_col(&mut self, t: Var, j: usize) -> Result<Var> {
        let st = self.shape(t);
        if j >= st.1 {
            return Err(SagaError::shape("select_col", format!("column {j} of {st:?}")));
        }
        let v = self.value(t).slice(s![.., j..j + 1]).to_owned();
        let rg = self.rg(t);
        Ok(self.push(v, Op::SelectCol(t, j), rg))
    }

    /// Multiplies row `n` of `t` by `w[n, 0]`.
    pub fn scale_rows(&mut self, t: Var, w: Var) -> Result<Var> {
        let (st, sw) = (self.shape(t), self.shape(w));
        if sw != (st.0, 1) {
            return Err(shape_err("scale_rows", st, sw));
        }
        let v = self.value(t) * self.value(w);
        let rg = self.rg(t) || self.rg(w);
        Ok(self.push(v, Op::ScaleRows(t, w), rg))
    }

    /// Horizontal concatenation.
    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(SagaError::shape("hstack", "no inputs"));
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("hstack", self.shape(first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::HStack(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    /// `out[p] = z_i · z_j` for every `(i, j)` in `pairs`, as a P×1 column.
    pub fn pair_dots(&mut self, z: Var, pairs: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let x = self.value(z);
        let n = x.nrows();
        if pairs.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(SagaError::shape("pair_dots", "pair index out of range"));
        }
        let v = Array2::from_shape_fn((pairs.len(), 1), |(p, _)| {
            let (i, j) = pairs[p];
            x.row(i).dot(&x.row(j))
        });
        let rg = self.rg(z);
        Ok(self.push(v, Op::PairDots(z, pairs), rg))
    }

    /// Mean squared error over the rows flagged in `rows`, normalized by
    /// `(#flagged rows) · cols`.
    pub fn mse_loss_masked(
        &mut self,
        pred: Var,
        target: Arc<Array2<f64>>,
        rows: Arc<Vec<bool>>,
    ) -> Result<Var> {
        let sp = self.shape(pred);
        if sp != target.dim() || rows.len() != sp.0 {
            return Err(shape_err("mse_loss_masked", sp, target.dim()));
        }
        let p = self.value(pred);
        check_finite(p, "mse prediction")?;
        let n_rows = rows.iter().filter(|&&r| r).count();
        if n_rows == 0 {
            return Err(SagaError::InvalidArgument(
                "masked MSE needs at least one selected row".into(),
            ));
        }
        let count = (n_rows * sp.1) as f64;
        let mut total = 0.0;
        for (i, (prow, trow)) in p.outer_iter().zip(target.outer_iter()).enumerate() {
            if rows[i] {
                total += Zip::from(&prow)
                    .and(&trow)
                    .fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
            }
        }
        let v = Array2::from_elem((1, 1), total / count);
        let rg = self.rg(pred);
        Ok(self.push(
            v,
            Op::MaskedMse {
                pred,
                target,
                rows,
                count,
            },
            rg,
        ))
    }

    /// `(1/|pred|) Σ w_ij · BCE(pred_ij, target_ij)` with predictions clamped
    /// into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce_loss_weighted(
        &mut self,
        pred: Var,
        target: Arc<Array2<f64>>,
        weight: Arc<Array2<f64>>,
    ) -> Result<Var> {
        let sp = self.shape(pred);
        if sp != target.dim() || sp != weight.dim() {
            return Err(shape_err("bce_loss_weighted", sp, target.dim()));
        }
        let p = self.value(pred);
        check_finite(p, "bce prediction")?;
        let total = Zip::from(p)
            .and(&*target)
            .and(&*weight)
            .fold(0.0, |acc, &p, &t, &w| acc + w * bce(p, t));
        let v = Array2::from_elem((1, 1), total / p.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(
            v,
            Op::WeightedBce {
                pred,
                target,
                weight,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits` over the listed rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        rows: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if labels.len() != n || rows.is_empty() {
            return Err(SagaError::shape(
                "cross_entropy",
                format!("{} labels, {} rows for {n} nodes", labels.len(), rows.len()),
            ));
        }
        if rows.iter().any(|&r| r >= n) || labels.iter().any(|&l| l >= c) {
            return Err(SagaError::shape("cross_entropy", "row or label out of range"));
        }
        let x = self.value(logits);
        check_finite(x, "cross-entropy logits")?;
        let mut total = 0.0;
        for &r in rows.iter() {
            let row = x.row(r);
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
        }
        let v = Array2::from_elem((1, 1), total / rows.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                labels,
                rows,
            },
            rg,
        ))
    }

    /// Reverse sweep from a 1×1 node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(SagaError::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param(_)) || !node.requires_grad {
                continue;
            }
            if let Some(g) = grads[idx].take() {
                self.propagate(node, g, &mut grads);
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradient of `loss` into every parameter of `store` used on
    /// this tape. Call [`ParamStore::zero_grad`] first for fresh gradients;
    /// parameters the loss does not reach are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[idx]) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, mut g: Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut send = |v: Var, contrib: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    send(*a, g.dot(&val(*b).t()));
                }
                if rg(*b) {
                    send(*b, val(*a).t().dot(&g));
                }
            }
            Op::Apply(op, t) => send(*t, op.apply_transpose(g.view())),
            Op::Gram(a) => {
                // (g + gᵀ)·a without materializing the transpose sum
                let x = val(*a);
                let mut d = g.dot(x);
                general_mat_mul(1.0, &g.t(), x, 1.0, &mut d);
                send(*a, d);
            }
            Op::Relu(a) => {
                Zip::from(&mut g)
                    .and(&node.value)
                    .for_each(|d, &y| if y <= 0.0 { *d = 0.0 });
                send(*a, g);
            }
            Op::Sigmoid(a) => {
                Zip::from(&mut g)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                send(*a, g);
            }
            Op::Add(a, b) => {
                if rg(*a) && rg(*b) {
                    send(*a, g.clone());
                }
                if rg(*b) {
                    send(*b, g);
                } else {
                    send(*a, g);
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    send(*a, g.clone());
                }
                g.mapv_inplace(|v| -v);
                send(*b, g);
            }
            Op::Affine(a, scale) => {
                g *= *scale;
                send(*a, g);
            }
            Op::ScaleBy(s, t) => {
                if rg(*s) {
                    let ds = Zip::from(&g).and(val(*t)).fold(0.0, |acc, &a, &b| acc + a * b);
                    send(*s, Array2::from_elem((1, 1), ds));
                }
                if rg(*t) {
                    g *= val(*s)[[0, 0]];
                    send(*t, g);
                }
            }
            Op::MulConst(a, c) => {
                g *= &**c;
                send(*a, g);
            }
            Op::Transpose(a) => send(*a, g.t().to_owned()),
            Op::RowSoftmax(a) => {
                let y = &node.value;
                g *= y;
                let dots = g.sum_axis(Axis(1));
                Zip::from(g.rows_mut())
                    .and(y.rows())
                    .and(&dots)
                    .for_each(|mut drow, yrow, &dot| {
                        Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= yv * dot);
                    });
                send(*a, g);
            }
            Op::AddRowBias(t, b) => {
                if rg(*b) {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                send(*t, g);
            }
            Op::SelectCol(t, j) => {
                let mut d = Array2::zeros(val(*t).dim());
                d.slice_mut(s![.., *j..*j + 1]).assign(&g);
                send(*t, d);
            }
            Op::ScaleRows(t, w) => {
                if rg(*w) {
                    send(*w, (&g * val(*t)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
                if rg(*t) {
                    g *= val(*w);
                    send(*t, g);
                }
            }
            Op::HStack(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    send(p, g.slice(s![.., col..col + w]).to_owned());
                    col += w;
                }
            }
            Op::Sum(a) => send(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::PairDots(z, pairs) => {
                let x = val(*z);
                let mut d = Array2::zeros(x.dim());
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let gp = g[[p, 0]];
                    d.row_mut(i).scaled_add(gp, &x.row(j));
                    d.row_mut(j).scaled_add(gp, &x.row(i));
                }
                send(*z, d);
            }
            Op::MaskedMse {
                pred,
                target,
                rows,
                count,
            } => {
                let scale = 2.0 * g[[0, 0]] / count;
                let mut d = val(*pred) - &**target;
                for (i, mut row) in d.outer_iter_mut().enumerate() {
                    if rows[i] {
                        row *= scale;
                    } else {
                        row.fill(0.0);
                    }
                }
                send(*pred, d);
            }
            Op::WeightedBce {
                pred,
                target,
                weight,
            } => {
                let p = val(*pred);
                let scale = g[[0, 0]] / p.len() as f64;
                let mut d = Array2::zeros(p.dim());
                Zip::from(&mut d)
                    .and(p)
                    .and(&**target)
                    .and(&**weight)
                    .for_each(|d, &p, &t, &w| *d = scale * w * bce_grad(p, t));
                send(*pred, d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                rows,
            } => {
                let x = val(*logits);
                let scale = g[[0, 0]] / rows.len() as f64;
                let mut d = Array2::zeros(x.dim());
                for &r in rows.iter() {
                    let row = x.row(r);
                    let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (c, e) in exps.iter().enumerate() {
                        d[[r, c]] += scale * e / z;
                    }
                    d[[r, labels[r]]] -= scale;
                }
                send(*logits, d);
            }
        }
    }
}
