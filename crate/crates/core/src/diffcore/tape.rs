//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records one forward evaluation. Nothing persists between
//! passes: build a fresh tape, run the computation, call [`Tape::backward`]
//! on a scalar node, read gradients, drop the tape.

use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    ConcatCols(Var, Var),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the output or is constant.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` got none.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient [`Tape::backward`] will report.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x[n, m] + bias[1, m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(Error::shape(format!(
                "add_bias: bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        let m = xv.cols();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Rectifier; the subgradient at exactly zero is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_cols(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Per-row sum: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.cols();
        let sums: Vec<f64> = v.data().chunks(m).map(|r| r.iter().sum()).collect();
        let n = sums.len();
        let out = Tensor::new(vec![n, 1], sums).expect("row sums");
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(out, Op::MeanAll(a), rg)
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar objective, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(output) {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if self.rg(a) {
                        let ga = accum(&mut grads, a, av);
                        matmul_bt_into(g.data(), bv.data(), ga.data_mut(), n, k, m);
                    }
                    if self.rg(b) {
                        let gb = accum(&mut grads, b, bv);
                        matmul_at_into(av.data(), g.data(), gb.data_mut(), n, k, m);
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.rg(x) {
                        add_into(accum(&mut grads, x, self.value(x)), &g, 1.0);
                    }
                    if self.rg(bias) {
                        let bv = self.value(bias);
                        let m = bv.len();
                        let gb = accum(&mut grads, bias, bv);
                        for row in g.data().chunks(m) {
                            for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        add_into(accum(&mut grads, a, self.value(a)), &g, 1.0);
                    }
                    if self.rg(b) {
                        add_into(accum(&mut grads, b, self.value(b)), &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        add_into(accum(&mut grads, a, self.value(a)), &g, 1.0);
                    }
                    if self.rg(b) {
                        add_into(accum(&mut grads, b, self.value(b)), &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let bv = self.value(b);
                        let ga = accum(&mut grads, a, self.value(a));
                        for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += gv * y;
                        }
                    }
                    if self.rg(b) {
                        let av = self.value(a);
                        let gb = accum(&mut grads, b, self.value(b));
                        for ((o, &gv), &x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += gv * x;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    add_into(accum(&mut grads, a, self.value(a)), &g, c);
                }
                Op::Relu(a) => {
                    let y = &node.value;
                    let ga = accum(&mut grads, a, self.value(a));
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = accum(&mut grads, a, self.value(a));
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Square(a) => {
                    let x = self.value(a);
                    let ga = accum(&mut grads, a, x);
                    for ((o, &gv), &xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o += 2.0 * gv * xv;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
                    let width = ca + cb;
                    if self.rg(a) {
                        let ga = accum(&mut grads, a, self.value(a));
                        for (dst, src) in ga.data_mut().chunks_mut(ca).zip(g.data().chunks(width)) {
                            for (o, &v) in dst.iter_mut().zip(&src[..ca]) {
                                *o += v;
                            }
                        }
                    }
                    if self.rg(b) {
                        let gb = accum(&mut grads, b, self.value(b));
                        for (dst, src) in gb.data_mut().chunks_mut(cb).zip(g.data().chunks(width)) {
                            for (o, &v) in dst.iter_mut().zip(&src[ca..]) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::SumCols(a) => {
                    let m = self.value(a).cols();
                    let ga = accum(&mut grads, a, self.value(a));
                    for (row, &gv) in ga.data_mut().chunks_mut(m).zip(g.data()) {
                        for o in row {
                            *o += gv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    let ga = accum(&mut grads, a, self.value(a));
                    for o in ga.data_mut() {
                        *o += gv;
                    }
                }
                Op::MeanAll(a) => {
                    let n = self.value(a).len().max(1) as f64;
                    let gv = g.data()[0] / n;
                    let ga = accum(&mut grads, a, self.value(a));
                    for o in ga.data_mut() {
                        *o += gv;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accum<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn add_into(dst: &mut Tensor, src: &Tensor, c: f64) {
    for (o, &v) in dst.data_mut().iter_mut().zip(src.data()) {
        *o += c * v;
    }
}
