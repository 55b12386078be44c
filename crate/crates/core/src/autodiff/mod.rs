//! Minimal reverse-mode differentiation over dense [`Array`]s.
//!
//! A [`Tape`] records every operation in creation order, which is also a
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//! Nodes created from [`Tape::constant`] (and everything computed only from
//! constants) are skipped during the sweep.
//!
//! Broadcasting is limited to an operand with a single element, or an
//! operand whose shape is a trailing suffix of the other's.

mod ops;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

pub use ops::{Binary, Reduce, Unary};

use crate::array::Array;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation whose forward pass is computed outside
/// the tape (for example a dynamic-programming loss).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, same order and shapes.
    fn backward(&self, grad: &Array, inputs: &[&Array], output: &Array) -> Vec<Array>;
}

pub(crate) enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Scan { x: Var, axis: usize, exclusive: bool },
    WindowSum { x: Var, axis: usize, width: usize, leading: bool },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Reduce { kind: Reduce, x: Var, axis: Option<usize> },
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    Pick { x: Var, indices: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

pub(crate) struct Node {
    pub(crate) value: Array,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records a computation graph. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Array {
        self.get(v).cloned().unwrap_or_else(|| Array::zeros(like))
    }
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

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Array) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Array::scalar(value))
    }

    /// A constant copy of `v`'s current value (stop-gradient).
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_raw(&self, value: Array, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn push(&self, name: &str, value: Array, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let rg = parents.iter().any(|&p| self.requires_grad(p));
        Ok(self.push_raw(value, op, rg))
    }

    // ---- elementwise ------------------------------------------------------

    pub fn unary(&self, kind: Unary, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| kind.forward(v));
        self.push(kind.name(), value, Op::Unary(kind, x), &[x])
    }

    pub fn binary(&self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            ops::broadcast_binary(kind, &av, &bv)?
        };
        self.push(kind.name(), value, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn abs(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    pub fn sqrt(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Unary::Clamp(lo, hi), x)
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(Unary::Affine(scale, shift), x)
    }

    pub fn scale(&self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 1.0)
    }

    // ---- linear algebra and shape ----------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            let (m, k) = av.dims2()?;
            let (k2, n) = bv.dims2()?;
            if k != k2 {
                return Err(Error::Shape(format!(
                    "matmul inner dimensions {:?} x {:?}",
                    av.shape(),
                    bv.shape()
                )));
            }
            Array::new(&[m, n], crate::array::matmul(av.data(), bv.data(), m, k, n))?
        };
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_forward(&self.value(x), axis, start, len)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    /// Row `r` of a 2-D array, as a `1 x n` array.
    pub fn row(&self, x: Var, r: usize) -> Result<Var> {
        self.slice(x, 0, r, 1)
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat of zero arrays".into()));
        }
        let value = {
            let vals: Vec<Ref<'_, Array>> = xs.iter().map(|&x| self.value(x)).collect();
            let refs: Vec<&Array> = vals.iter().map(|r| &**r).collect();
            ops::concat_forward(&refs, axis)?
        };
        self.push("concat", value, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// Rows of a 2-D array (embedding lookup).
    pub fn index_select(&self, x: Var, indices: &[usize]) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let (r, c) = xv.dims2()?;
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                if i >= r {
                    return Err(Error::Shape(format!("row index {} out of {}", i, r)));
                }
                data.extend_from_slice(xv.row_slice(i));
            }
            Array::new(&[indices.len(), c], data)?
        };
        self.push("index_select", value, Op::IndexSelect { x, indices: indices.to_vec() }, &[x])
    }

    /// `out[i] = x[i, indices[i]]` for a 2-D `x`.
    pub fn pick(&self, x: Var, indices: &[usize]) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let (r, c) = xv.dims2()?;
            if indices.len() != r {
                return Err(Error::Shape(format!("pick needs {} indices, got {}", r, indices.len())));
            }
            let mut data = Vec::with_capacity(r);
            for (row, &i) in indices.iter().enumerate() {
                if i >= c {
                    return Err(Error::Shape(format!("column index {} out of {}", i, c)));
                }
                data.push(xv.get2(row, i));
            }
            Array::new(&[r], data)?
        };
        self.push("pick", value, Op::Pick { x, indices: indices.to_vec() }, &[x])
    }

    // ---- scans and reductions ---------------------------------------------

    /// Inclusive cumulative sum along `axis`.
    pub fn cumsum(&self, x: Var, axis: usize) -> Result<Var> {
        self.scan(x, axis, false)
    }

    /// Exclusive cumulative sum along `axis` (first element is 0).
    pub fn cumsum_exclusive(&self, x: Var, axis: usize) -> Result<Var> {
        self.scan(x, axis, true)
    }

    fn scan(&self, x: Var, axis: usize, exclusive: bool) -> Result<Var> {
        let value = ops::scan_forward(&self.value(x), axis, exclusive)?;
        self.push("cumsum", value, Op::Scan { x, axis, exclusive }, &[x])
    }

    /// Inclusive cumulative product along `axis`, computed as
    /// `exp(cumsum(log(clamp(x, CUMPROD_FLOOR, inf))))`.
    pub fn cumprod(&self, x: Var, axis: usize) -> Result<Var> {
        let logs = self.log(self.clamp(x, CUMPROD_FLOOR, f64::INFINITY)?)?;
        self.exp(self.cumsum(logs, axis)?)
    }

    /// Exclusive cumulative product (first element is 1), same safe form.
    pub fn cumprod_exclusive(&self, x: Var, axis: usize) -> Result<Var> {
        let logs = self.log(self.clamp(x, CUMPROD_FLOOR, f64::INFINITY)?)?;
        self.exp(self.cumsum_exclusive(logs, axis)?)
    }

    /// Sum over a window of `width` elements along `axis`. Trailing windows
    /// end at each index; leading windows start at it. Windows are
    /// truncated at the array edges.
    pub fn window_sum(&self, x: Var, axis: usize, width: usize, leading: bool) -> Result<Var> {
        if width == 0 {
            return Err(Error::InvalidArgument("window width must be >= 1".into()));
        }
        let value = ops::window_forward(&self.value(x), axis, width, leading)?;
        self.push("window_sum", value, Op::WindowSum { x, axis, width, leading }, &[x])
    }

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let value = ops::softmax_forward(&self.value(x), axis, false)?;
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let value = ops::softmax_forward(&self.value(x), axis, true)?;
        self.push("log_softmax", value, Op::LogSoftmax { x, axis }, &[x])
    }

    /// Reduce along `axis` (the axis is removed), or over everything to a
    /// scalar when `axis` is `None`.
    pub fn reduce(&self, kind: Reduce, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = ops::reduce_forward(kind, &self.value(x), axis)?;
        self.push(kind.name(), value, Op::Reduce { kind, x, axis }, &[x])
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, x, None)
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, x, None)
    }

    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, x, Some(axis))
    }

    /// Records an externally computed forward value with its backward rule.
    pub fn custom(&self, inputs: &[Var], output: Array, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.push(name, output, Op::Custom { inputs: inputs.to_vec(), op }, inputs)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape().to_vec();
        if nodes[root.0].value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Array>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array::full(&root_shape, 1.0));
        for idx in (0..=root.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (parent, pg) in ops::backward_node(&nodes, node, &g)? {
                if !nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !nodes[idx].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Lower clamp applied to cumulative-product inputs before taking logs.
pub const CUMPROD_FLOOR: f64 = 1e-12;
