//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are only
//! ever appended and always reference earlier nodes, so the tape order is a
//! topological order and [`Graph::backward`] simply walks it in reverse.

mod adam;
mod check;
mod suite;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{grad_check, grad_check_wrt, GradCheckReport};
pub use suite::{gradcheck_suite, SuiteEntry, SUITE_EPS, SUITE_OPS, SUITE_TOL};

use indexmap::IndexMap;

use crate::conv::{conv2d, conv2d_backward, conv3d, conv3d_backward};
use crate::deform::{d3d, d3d_backward, OffsetField};
use crate::error::{Error, Result};
use crate::tensor::{pixel_unshuffle, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Concat(Vec<Var>),
    PixelShuffle(Var, usize),
    FoldTime(Var),
    Conv3d { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var> },
    D3d { x: Var, w: Var, b: Option<Var>, offsets: Var },
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph<S = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that is not differentiated (data, targets).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An unnamed differentiable leaf.
    pub fn variable(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A named differentiable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, t: Tensor<S>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let out = self.value(a).scalar_mul(s);
        let rg = self.grad_any(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        let rg = self.grad_any(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn concat_channels(&mut self, vars: &[Var]) -> Result<Var> {
        let refs: Vec<_> = vars.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&refs)?;
        let rg = self.grad_any(vars);
        Ok(self.push(out, Op::Concat(vars.to_vec()), rg))
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let out = self.value(a).pixel_shuffle(r)?;
        let rg = self.grad_any(&[a]);
        Ok(self.push(out, Op::PixelShuffle(a, r), rg))
    }

    /// `[C, T, H, W] -> [T*C, H, W]`, see [`Tensor::fold_time`].
    pub fn fold_time(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).fold_time()?;
        let rg = self.grad_any(&[a]);
        Ok(self.push(out, Op::FoldTime(a), rg))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv3d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.grad_any(&[x, w]) || b.is_some_and(|b| self.grad_any(&[b]));
        Ok(self.push(out, Op::Conv3d { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.grad_any(&[x, w]) || b.is_some_and(|b| self.grad_any(&[b]));
        Ok(self.push(out, Op::Conv2d { x, w, b }, rg))
    }

    /// Deformable 3D convolution; `offsets` must evaluate to `[2N, T, H, W]`.
    pub fn d3d(&mut self, x: Var, w: Var, b: Option<Var>, offsets: Var) -> Result<Var> {
        let field = OffsetField::new(self.value(offsets).clone())?;
        let out = d3d(self.value(x), self.value(w), b.map(|b| self.value(b)), &field)?;
        let rg = self.grad_any(&[x, w, offsets]) || b.is_some_and(|b| self.grad_any(&[b]));
        Ok(self.push(out, Op::D3d { x, w, b, offsets }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.grad_any(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean squared difference of two equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::mismatch("mse", ta.shape(), tb.shape()));
        }
        let out = Tensor::scalar(mse_value(ta, tb));
        let rg = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    /// Gradients of the scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one())?);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params: IndexMap<String, Tensor<S>> = IndexMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.name else { continue };
            let g = grads[i].clone().unwrap_or_else(|| node.value.zeros_like());
            match params.get_mut(name) {
                Some(acc) => acc.add_assign(&g)?,
                None => {
                    params.insert(name.clone(), g);
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<S>| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    acc(*a, g.mul(tb)?)?;
                }
                if wants(*b) {
                    acc(*b, g.mul(ta)?)?;
                }
            }
            Op::Scale(a, s) => acc(*a, g.scalar_mul(*s))?,
            Op::Relu(a) => {
                let out = &self.nodes[i].value;
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&d, &y)| if y > S::zero() { d } else { S::zero() })
                    .collect();
                acc(*a, Tensor::new(g.shape(), data)?)?;
            }
            Op::Concat(vars) => {
                let mut start = 0;
                for &v in vars {
                    let c = self.value(v).shape()[0];
                    if wants(v) {
                        acc(v, g.slice_channels(start, start + c)?)?;
                    }
                    start += c;
                }
            }
            Op::PixelShuffle(a, r) => acc(*a, pixel_unshuffle(g, *r)?)?,
            Op::FoldTime(a) => {
                let frames = self.value(*a).shape()[1];
                acc(*a, g.unfold_time(frames)?)?;
            }
            Op::Conv3d { x, w, b } => {
                let cg = conv3d_backward(self.value(*x), self.value(*w), g, wants(*x))?;
                if let Some(dx) = cg.dx {
                    acc(*x, dx)?;
                }
                acc(*w, cg.dw)?;
                if let Some(b) = b {
                    acc(*b, cg.dbias)?;
                }
            }
            Op::Conv2d { x, w, b } => {
                let cg = conv2d_backward(self.value(*x), self.value(*w), g, wants(*x))?;
                if let Some(dx) = cg.dx {
                    acc(*x, dx)?;
                }
                acc(*w, cg.dw)?;
                if let Some(b) = b {
                    acc(*b, cg.dbias)?;
                }
            }
            Op::D3d { x, w, b, offsets } => {
                let field = OffsetField::new(self.value(*offsets).clone())?;
                let dg = d3d_backward(self.value(*x), self.value(*w), &field, g, wants(*x))?;
                if let Some(dx) = dg.dx {
                    acc(*x, dx)?;
                }
                acc(*w, dg.dw)?;
                if let Some(b) = b {
                    acc(*b, dg.dbias)?;
                }
                acc(*offsets, dg.doffsets)?;
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, g.data()[0])?)?;
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = g.data()[0] * S::lit(2.0) / S::lit(ta.len() as f64);
                let diff = ta.sub(tb)?.scalar_mul(k);
                if wants(*b) {
                    acc(*b, diff.scalar_mul(-S::one()))?;
                }
                acc(*a, diff)?;
            }
        }
        Ok(())
    }
}

/// Mean squared difference, accumulated in index order.
pub fn mse_value<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> S {
    let mut s = S::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        s += d * d;
    }
    s / S::lit(a.len() as f64)
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S = f32> {
    grads: Vec<Option<Tensor<S>>>,
    params: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a node, `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zeros when the loss does not depend on it.
    pub fn wrt(&self, graph: &Graph<S>, v: Var) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| graph.value(v).zeros_like())
    }

    /// Gradients of all named parameters in registration order. Parameters
    /// the loss does not reach get zeros; repeated names are summed.
    pub fn params(&self) -> &IndexMap<String, Tensor<S>> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<S>> {
        self.params
    }
}
