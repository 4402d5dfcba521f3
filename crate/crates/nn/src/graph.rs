//! Tape of forward operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a reverse topological order and every recorded operation is visited
//! exactly once.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::ops::conv::{conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward};
use crate::ops::norm::{batchnorm_backward, batchnorm_forward, BatchNormSaved, BatchStats};
use crate::ops::pool::{maxpool1d_forward, maxpool2d_forward, maxpool_backward};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved<T>,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    param_leaves: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

/// Gradients of leaf nodes after [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            param_leaves: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf holding a copy of a stored parameter. Repeated calls for the same
    /// parameter return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.kind == ParamKind::Trainable);
        self.param_leaves.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    pub fn param_leaves(&self) -> &[(ParamId, Var)] {
        &self.param_leaves
    }

    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = conv1d_forward(self.value(x), self.value(w), stride, padding)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            y,
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), stride, padding)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                w,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (y, argmax) = maxpool1d_forward(self.value(x), kernel, stride, padding)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (y, argmax) = maxpool2d_forward(self.value(x), kernel, stride, padding)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, rg))
    }

    /// Batch statistics are returned in training mode (`running == None`)
    /// so the caller can update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (y, saved, stats) =
            batchnorm_forward(self.value(x), self.value(gamma), self.value(beta), running, eps)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(y, Op::Relu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    /// `x [B,in] · wᵀ + b`, with `w` stored as `[out,in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(NnError::Shape(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y = vec![T::zero(); batch * out];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.numel() != out {
                return Err(NnError::Shape(format!(
                    "linear: bias {:?} for {out} outputs",
                    bias.shape()
                )));
            }
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias.data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(batch, out, inp, self.value(x).data(), false, self.value(w).data(), true, beta, &mut y);
        let rg = self.rg(x) || self.rg(w) || b.map(|b| self.rg(b)).unwrap_or(false);
        Ok(self.push(Tensor::new(&[batch, out], y)?, Op::Linear { x, w, b }, rg))
    }

    /// Mean over every axis after the channel axis: `[B,C,...] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() < 3 {
            return Err(NnError::Shape(format!(
                "global_avg_pool expects [B,C,...], got {:?}",
                xv.shape()
            )));
        }
        let (b, c) = (xv.dim(0), xv.dim(1));
        let inner: usize = xv.shape()[2..].iter().product();
        let n = T::from_usize(inner).unwrap();
        let y: Vec<T> = xv
            .data()
            .chunks(inner)
            .map(|ch| ch.iter().copied().sum::<T>() / n)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[b, c], y)?, Op::GlobalAvgPool { x }, rg))
    }

    /// `[B,p] ++ [B,q] -> [B,p+q]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0) {
            return Err(NnError::Shape(format!(
                "concat: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (rows, p, q) = (av.dim(0), av.dim(1), bv.dim(1));
        let mut y = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            y.extend_from_slice(av.row(r));
            y.extend_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[rows, p + q], y)?, Op::Concat { a, b }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.dim(0) != labels.len() {
            return Err(NnError::Shape(format!(
                "softmax_cross_entropy: logits {:?} with {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let (b, k) = (lv.dim(0), lv.dim(1));
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(NnError::Label {
                label: bad,
                classes: k,
            });
        }
        let mut probs = vec![T::zero(); b * k];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + j] = e;
                s += e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= s;
            }
            total += s.ln() + m - row[label];
        }
        let loss = total / T::from_usize(b).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: Tensor::new(&[b, k], probs)?,
            },
            rg,
        ))
    }

    /// Backward pass of a scalar node with unit seed.
    pub fn backward_scalar(&self, loss: Var) -> Gradients<T> {
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        self.backward(&[(loss, seed)])
    }

    /// Propagates the given output gradients back through the tape.
    /// Gradients are kept for leaves only.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(
                self.value(*v).shape(),
                g.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[v.0], g.clone());
        }
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, dy, &mut grads);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<T>, dy: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let (dx, dw) = conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    &dy,
                    *stride,
                    *padding,
                    self.rg(*x),
                )
                .expect("conv1d geometry validated in forward");
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.rg(*w) {
                    accumulate(&mut grads[w.0], dw);
                }
            }
            Op::Conv2d {
                x,
                w,
                stride,
                padding,
            } => {
                let (dx, dw) = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    &dy,
                    *stride,
                    *padding,
                    self.rg(*x),
                )
                .expect("conv2d geometry validated in forward");
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.rg(*w) {
                    accumulate(&mut grads[w.0], dw);
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.rg(*x) {
                    let dx = maxpool_backward(self.value(*x).shape(), argmax, &dy);
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = batchnorm_backward(saved, self.value(*gamma), &dy);
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.rg(*gamma) {
                    accumulate(&mut grads[gamma.0], dg);
                }
                if self.rg(*beta) {
                    accumulate(&mut grads[beta.0], db);
                }
            }
            Op::Relu { x } => {
                let mut dx = dy;
                for (d, &v) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], dy.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], dy);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (batch, inp, out) = (xv.dim(0), xv.dim(1), wv.dim(0));
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); batch * inp];
                    gemm(batch, inp, out, dy.data(), false, wv.data(), false, T::zero(), &mut dx);
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); out * inp];
                    gemm(out, inp, batch, dy.data(), true, xv.data(), false, T::zero(), &mut dw);
                    accumulate(&mut grads[w.0], Tensor::new(wv.shape(), dw).unwrap());
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); out];
                        for row in dy.data().chunks(out) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads[b.0], Tensor::new(self.value(*b).shape(), db).unwrap());
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                let xv = self.value(*x);
                let inner: usize = xv.shape()[2..].iter().product();
                let n = T::from_usize(inner).unwrap();
                let mut dx = Vec::with_capacity(xv.numel());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat(g / n).take(inner));
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape(), dx).unwrap());
            }
            Op::Concat { a, b } => {
                let (p, q) = (self.value(*a).dim(1), self.value(*b).dim(1));
                let rows = dy.dim(0);
                let mut da = Vec::with_capacity(rows * p);
                let mut db = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    let row = dy.row(r);
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], Tensor::new(&[rows, p], da).unwrap());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], Tensor::new(&[rows, q], db).unwrap());
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.dim(1);
                let scale = dy.data()[0] / T::from_usize(labels.len()).unwrap();
                let mut d = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    d.data_mut()[r * k + label] -= T::one();
                }
                for v in d.data_mut() {
                    *v *= scale;
                }
                accumulate(&mut grads[logits.0], d);
            }
        }
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for &(id, v) in &self.param_leaves {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::zeros(&[3, 5]));
        let l = g.softmax_cross_entropy(x, &[0, 4, 2]).unwrap();
        assert!((g.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);
        assert!(g.softmax_cross_entropy(x, &[0, 5, 2]).is_err());
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.leaf(Tensor::new(&[2], vec![1.0, -3.0]).unwrap(), true);
        let y = g.add(x, x).unwrap();
        let grads = g.backward(&[(y, Tensor::full(&[2], 1.0))]);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn linear_forward() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.input(Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let b = g.input(Tensor::new(&[3], vec![0.5, 0.0, -1.0]).unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 2.0, 2.0]);
    }
}
