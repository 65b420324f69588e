//! Dense f32 tensors with reverse-mode automatic differentiation over a
//! fixed op set.
//!
//! Operations build a DAG while any input is tracked (a `requires_grad`
//! leaf or derived from one). `backward` replays the DAG once in reverse
//! topological order and accumulates gradients into every reachable
//! tracked tensor. Gradients accumulate across fan-out and across calls;
//! zeroing is an explicit `zero_grad`.
//!
//! Tensors without tape attachment are plain immutable values. One graph
//! is single-threaded; independent graphs are independent.

mod gradcheck;
mod io;
pub mod ops;

pub use gradcheck::grad_check;
pub use io::{read_tensor, write_tensor};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Inputs to `log` are floored here before taking the logarithm.
pub const LOG_FLOOR: f32 = 1e-8;
/// Inputs to `exp` are clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub const EXP_CLAMP: f32 = 60.0;

/// Dense multi-dimensional array of f32, rank 1..=4, row-major.
/// Image-like data uses N×C×H×W layout.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    node: Option<TapeNode>,
}

/// Recorded forward op: identifies the vjp rule and holds the input handles
/// (which keep the upstream graph alive until the output is dropped).
pub(crate) struct TapeNode {
    op: Op,
}

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Abs(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Relu(Tensor),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
    },
    Upsample2x(Tensor),
    SoftmaxChannel(Tensor),
    ReduceMean(Tensor),
    ReduceSum(Tensor),
    ElemwiseMax(Tensor, Tensor),
    /// Gradient flows to the source only; the grid is a fixed resampling map.
    BilinearSample {
        source: Tensor,
        grid: Tensor,
    },
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::invalid(format!(
            "tensor rank must be 1..=4, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("zero-sized dim in shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::invalid(format!(
            "shape {shape:?} wants {numel} elements, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    /// Plain value tensor (not tracked).
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![v; n], false, None)
    }

    /// Rank-1 single-element tensor.
    pub fn scalar(v: f32) -> Tensor {
        Self::raw(vec![1], vec![v], false, None)
    }

    fn raw(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<TapeNode>) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, op: Op) -> Tensor {
        let tracked = op.inputs().iter().any(|t| t.tracked());
        let node = if tracked { Some(TapeNode { op }) } else { None };
        Self::raw(shape, data, false, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True if this tensor participates in a gradient graph.
    pub fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    /// Borrow the flat data (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Value copy cut loose from any graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// In-place data edit for leaves (optimizer updates). Must not be called
    /// while a graph referencing this tensor is still pending backward.
    pub fn with_data_mut(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Accumulated gradient, if any reached this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    /// Gradient with unreachable-leaf semantics: zeros when nothing flowed.
    pub fn grad_or_zeros(&self) -> Vec<f32> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, contribution: &[f32]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Every tracked tensor reachable
    /// from `self` receives (accumulates) its gradient contribution.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.tracked() {
            return Ok(()); // constant loss: nothing depends on anything
        }

        // Iterative post-order DFS along input edges; reversed it is a
        // topological order with every consumer before its producers.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = Vec::new();
        visited.insert(self.ptr_id());
        stack.push((self.clone(), 0));
        while let Some((t, i)) = stack.pop() {
            let inputs: Vec<Tensor> = match &t.inner.node {
                Some(n) => n.op.inputs().into_iter().cloned().collect(),
                None => Vec::new(),
            };
            if i < inputs.len() {
                stack.push((t, i + 1));
                let child = inputs[i].clone();
                if child.tracked() && visited.insert(child.ptr_id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }

        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            if let Some(node) = &t.inner.node {
                let dout = t
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .expect("node reachable from loss must have a gradient");
                node.op.vjp(t, &dout);
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, tracked={})",
            self.inner.shape,
            self.tracked()
        )
    }
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ElemwiseMax(a, b) => vec![a, b],
            Op::Abs(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Relu(x)
            | Op::Upsample2x(x)
            | Op::SoftmaxChannel(x)
            | Op::ReduceMean(x)
            | Op::ReduceSum(x) => vec![x],
            Op::Conv2d { input, weight, bias } => vec![input, weight, bias],
            Op::BilinearSample { source, grid } => vec![source, grid],
        }
    }

    /// Accumulate `dout`'s contribution into each tracked input.
    fn vjp(&self, out: &Tensor, dout: &[f32]) {
        match self {
            Op::Add(a, b) => {
                if a.tracked() {
                    a.accumulate_grad(dout);
                }
                if b.tracked() {
                    b.accumulate_grad(dout);
                }
            }
            Op::Sub(a, b) => {
                if a.tracked() {
                    a.accumulate_grad(dout);
                }
                if b.tracked() {
                    let neg: Vec<f32> = dout.iter().map(|d| -d).collect();
                    b.accumulate_grad(&neg);
                }
            }
            Op::Mul(a, b) => {
                if a.tracked() {
                    let bv = b.data();
                    let da: Vec<f32> = dout.iter().zip(bv.iter()).map(|(d, x)| d * x).collect();
                    drop(bv);
                    a.accumulate_grad(&da);
                }
                if b.tracked() {
                    let av = a.data();
                    let db: Vec<f32> = dout.iter().zip(av.iter()).map(|(d, x)| d * x).collect();
                    drop(av);
                    b.accumulate_grad(&db);
                }
            }
            Op::Abs(x) => {
                if x.tracked() {
                    let xv = x.data();
                    let dx: Vec<f32> = dout
                        .iter()
                        .zip(xv.iter())
                        .map(|(d, &v)| {
                            if v > 0.0 {
                                *d
                            } else if v < 0.0 {
                                -*d
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Exp(x) => {
                if x.tracked() {
                    let xv = x.data();
                    let ov = out.data();
                    // clamped regions are flat
                    let dx: Vec<f32> = dout
                        .iter()
                        .zip(xv.iter().zip(ov.iter()))
                        .map(|(d, (&v, &o))| if v.abs() < EXP_CLAMP { d * o } else { 0.0 })
                        .collect();
                    drop(ov);
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Log(x) => {
                if x.tracked() {
                    let xv = x.data();
                    let dx: Vec<f32> = dout
                        .iter()
                        .zip(xv.iter())
                        .map(|(d, &v)| if v > LOG_FLOOR { d / v } else { 0.0 })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Relu(x) => {
                if x.tracked() {
                    let xv = x.data();
                    let dx: Vec<f32> = dout
                        .iter()
                        .zip(xv.iter())
                        .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Conv2d { input, weight, bias } => {
                ops::conv2d_vjp(input, weight, bias, dout);
            }
            Op::Upsample2x(x) => {
                if x.tracked() {
                    let dx = ops::upsample2x_vjp(x.shape(), dout);
                    x.accumulate_grad(&dx);
                }
            }
            Op::SoftmaxChannel(x) => {
                if x.tracked() {
                    let dx = ops::softmax_channel_vjp(&out.data(), out.shape(), dout);
                    x.accumulate_grad(&dx);
                }
            }
            Op::ReduceMean(x) => {
                if x.tracked() {
                    let n = x.numel() as f32;
                    let dx = vec![dout[0] / n; x.numel()];
                    x.accumulate_grad(&dx);
                }
            }
            Op::ReduceSum(x) => {
                if x.tracked() {
                    let dx = vec![dout[0]; x.numel()];
                    x.accumulate_grad(&dx);
                }
            }
            Op::ElemwiseMax(a, b) => {
                // ties route to the first argument
                let av = a.to_vec();
                let bv = b.to_vec();
                if a.tracked() {
                    let da: Vec<f32> = dout
                        .iter()
                        .enumerate()
                        .map(|(i, d)| if av[i] >= bv[i] { *d } else { 0.0 })
                        .collect();
                    a.accumulate_grad(&da);
                }
                if b.tracked() {
                    let db: Vec<f32> = dout
                        .iter()
                        .enumerate()
                        .map(|(i, d)| if av[i] >= bv[i] { 0.0 } else { *d })
                        .collect();
                    b.accumulate_grad(&db);
                }
            }
            Op::BilinearSample { source, grid } => {
                if source.tracked() {
                    let dsrc = ops::bilinear_sample_vjp(source.shape(), &grid.data(), grid.shape(), dout);
                    source.accumulate_grad(&dsrc);
                }
            }
        }
    }
}
