//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records tensor-valued operations in evaluation order. Each
//! recorded node is addressed by a [`Var`]. Calling [`Tape::backward`] with a
//! seed for one output node propagates vector-Jacobian products to every node
//! recorded before it and returns the accumulated [`Gradients`].
//!
//! A tape supports exactly one backward pass per forward pass: once consumed
//! it must be [`reset`](Tape::reset) before new operations are recorded.

use crate::error::{Error, Result};
use crate::nn::{Activation, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// Matrix (m×n) times column vector (n×1).
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Element-wise product.
    Mul(Var, Var),
    /// Tensor times a 1×1 node.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Activation(Activation, Var),
    Sum(Var),
    Dot(Var, Var),
    /// Quotient of two 1×1 nodes.
    Div(Var, Var),
    Concat(Var, Var),
    Index(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all recorded nodes so a new forward pass can be recorded.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.spent = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.spent {
            return Err(Error::Tape("tape was consumed by backward; reset before recording"));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, var: Var) -> Result<&Tensor> {
        self.nodes
            .get(var.0)
            .map(|n| &n.value)
            .ok_or(Error::Tape("variable does not belong to this tape"))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn vector(&mut self, values: &[f64]) -> Result<Var> {
        self.leaf(Tensor::column(values.to_vec()))
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.check(w)?, self.check(x)?);
        if xv.cols() != 1 || wv.cols() != xv.rows() {
            return Err(Error::shape(
                "matvec",
                format!("{}x1 input for a {}x{} matrix", wv.cols(), wv.rows(), wv.cols()),
                format!("{}x{}", xv.rows(), xv.cols()),
            ));
        }
        let (m, n) = wv.shape();
        let (wd, xd) = (wv.data(), xv.data());
        let out = (0..m)
            .map(|i| {
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(Tensor::column(out), Op::MatVec(w, x))
    }

    fn same_shape(&self, context: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                context,
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every entry of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.check(s)?;
        if sv.len() != 1 {
            return Err(Error::shape("scale_by", "1x1 scale", format!("{:?}", sv.shape())));
        }
        let factor = sv.item();
        let v = self.check(x)?.map(|e| e * factor);
        self.push(v, Op::ScaleBy(x, s))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.check(x)?.map(|e| e * factor);
        self.push(v, Op::Scale(x, factor))
    }

    pub fn activation(&mut self, act: Activation, x: Var) -> Result<Var> {
        let v = self.check(x)?.map(|e| act.apply(e));
        self.push(v, Op::Activation(act, x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.check(x)?.data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let total = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Tensor::scalar(total), Op::Dot(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.len() != 1 || bv.len() != 1 {
            return Err(Error::shape(
                "div",
                "1x1 operands",
                format!("{:?} / {:?}", av.shape(), bv.shape()),
            ));
        }
        let v = av.item() / bv.item();
        self.push(Tensor::scalar(v), Op::Div(a, b))
    }

    /// Stacks two column vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.cols() != 1 || bv.cols() != 1 {
            return Err(Error::shape(
                "concat",
                "column vectors",
                format!("{:?}, {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        self.push(Tensor::column(data), Op::Concat(a, b))
    }

    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = self.check(x)?;
        let v = *xv
            .data()
            .get(i)
            .ok_or_else(|| Error::shape("index", format!("index < {}", xv.len()), i))?;
        self.push(Tensor::scalar(v), Op::Index(x, i))
    }

    pub fn square_norm(&mut self, x: Var) -> Result<Var> {
        self.dot(x, x)
    }

    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or(Error::Tape("mean of an empty set of terms"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        self.scale(acc, 1.0 / terms.len() as f64)
    }

    /// Propagates `seed` backwards from `output` through every recorded node.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward without a recorded forward pass"));
        }
        if self.spent {
            return Err(Error::Tape("second backward pass without a new forward pass"));
        }
        let out_shape = self.check(output)?.shape();
        if out_shape != seed.shape() {
            return Err(Error::shape(
                "backward seed",
                format!("{out_shape:?}"),
                format!("{:?}", seed.shape()),
            ));
        }
        self.spent = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                // Leaves keep their gradient for the caller.
                Op::Leaf => grads[idx] = Some(g),
                Op::MatVec(w, x) => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let (m, n) = wv.shape();
                    let mut gw = Tensor::zeros(m, n);
                    let mut gx = Tensor::zeros(n, 1);
                    {
                        let gwd = gw.data_mut();
                        for i in 0..m {
                            let gi = g.data()[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gwd[i * n + j] = gi * xv.data()[j];
                            }
                        }
                    }
                    {
                        let gxd = gx.data_mut();
                        let wd = wv.data();
                        for i in 0..m {
                            let gi = g.data()[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gxd[j] += wd[i * n + j] * gi;
                            }
                        }
                    }
                    accumulate(&mut grads, w, gw);
                    accumulate(&mut grads, x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[b.0].value, |x, y| x * y);
                    let gb = g.zip_map(&self.nodes[a.0].value, |x, y| x * y);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::ScaleBy(x, s) => {
                    let factor = self.nodes[s.0].value.item();
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(self.nodes[x.0].value.data())
                        .map(|(a, b)| a * b)
                        .sum();
                    accumulate(&mut grads, x, g.map(|v| v * factor));
                    accumulate(&mut grads, s, Tensor::scalar(gs));
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, x, g.map(|v| v * factor));
                }
                Op::Activation(act, x) => {
                    let xv = &self.nodes[x.0].value;
                    let yv = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data().iter().zip(yv.data()))
                        .map(|(gi, (&xi, &yi))| gi * act.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, x, Tensor::from_vec(xv.rows(), xv.cols(), data));
                }
                Op::Sum(x) => {
                    let gi = g.item();
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut grads, x, Tensor::from_vec(xv.rows(), xv.cols(), vec![gi; xv.len()]));
                }
                Op::Dot(a, b) => {
                    let gi = g.item();
                    let ga = self.nodes[b.0].value.map(|v| v * gi);
                    let gb = self.nodes[a.0].value.map(|v| v * gi);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Div(a, b) => {
                    let gi = g.item();
                    let av = self.nodes[a.0].value.item();
                    let bv = self.nodes[b.0].value.item();
                    accumulate(&mut grads, a, Tensor::scalar(gi / bv));
                    accumulate(&mut grads, b, Tensor::scalar(-gi * av / (bv * bv)));
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    let (ga, gb) = g.data().split_at(na);
                    accumulate(&mut grads, a, Tensor::column(ga.to_vec()));
                    accumulate(&mut grads, b, Tensor::column(gb.to_vec()));
                }
                Op::Index(x, i) => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    gx.data_mut()[i] = g.item();
                    accumulate(&mut grads, x, gx);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of the seeded output with respect to leaf nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for a leaf; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}
