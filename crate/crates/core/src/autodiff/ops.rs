use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Node, Op, Var};
use crate::array::{axis_split, matmul_nt, matmul_tn, Array};
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    Sqrt,
    Clamp(f64, f64),
    /// `scale * x + shift`
    Affine(f64, f64),
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Abs => "abs",
            Unary::Sqrt => "sqrt",
            Unary::Clamp(..) => "clamp",
            Unary::Affine(..) => "affine",
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => math::exp(x),
            Unary::Log => math::ln(x),
            Unary::Sigmoid => math::sigmoid(x),
            Unary::Tanh => math::tanh(x),
            Unary::Relu => x.max(0.0),
            Unary::Abs => x.abs(),
            Unary::Sqrt => math::sqrt(x),
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
            Unary::Affine(s, c) => s * x + c,
        }
    }

    /// Derivative given input `x` and output `y`. Kinks get derivative 0.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Sqrt => 0.5 / y,
            Unary::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Affine(s, _) => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Max,
    Mean,
}

impl Reduce {
    pub fn name(self) -> &'static str {
        match self {
            Reduce::Sum => "sum",
            Reduce::Max => "max",
            Reduce::Mean => "mean",
        }
    }
}

/// Which operand is broadcast, if any.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Bcast {
    None,
    Left,
    Right,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        return Ok(Bcast::None);
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb == 1 || (b.len() < a.len() && a.ends_with(b)) {
        return Ok(Bcast::Right);
    }
    if na == 1 || (a.len() < b.len() && b.ends_with(a)) {
        return Ok(Bcast::Left);
    }
    Err(Error::Shape(format!("cannot broadcast {:?} with {:?}", a, b)))
}

pub(super) fn broadcast_binary(kind: Binary, a: &Array, b: &Array) -> Result<Array> {
    match broadcast_kind(a.shape(), b.shape())? {
        Bcast::None => Ok(a.zip_map(b, |x, y| kind.apply(x, y))),
        Bcast::Right => {
            let bd = b.data();
            let n = bd.len();
            let data = a.data().iter().enumerate().map(|(k, &x)| kind.apply(x, bd[k % n])).collect();
            Array::new(a.shape(), data)
        }
        Bcast::Left => {
            let ad = a.data();
            let n = ad.len();
            let data = b.data().iter().enumerate().map(|(k, &y)| kind.apply(ad[k % n], y)).collect();
            Array::new(b.shape(), data)
        }
    }
}

/// Sum a full-size gradient down onto a broadcast operand of `n` elements.
fn reduce_to(g: &[f64], shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for (k, &v) in g.iter().enumerate() {
        out[k % n] += v;
    }
    Array::new(shape, out).expect("reduced shape")
}

pub(super) fn slice_forward(x: &Array, axis: usize, start: usize, len: usize) -> Result<Array> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    if start + len > n {
        return Err(Error::Shape(format!("slice {}..{} out of axis length {}", start, start + len, n)));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner;
        out.extend_from_slice(&d[base + start * inner..base + (start + len) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Array::new(&shape, out)
}

pub(super) fn concat_forward(xs: &[&Array], axis: usize) -> Result<Array> {
    let first = xs[0].shape();
    let mut total = 0;
    for x in xs {
        let s = x.shape();
        if s.len() != first.len()
            || s.iter().zip(first).enumerate().any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(Error::Shape(format!("concat shapes {:?} vs {:?}", first, s)));
        }
        total += s.get(axis).copied().ok_or_else(|| Error::Shape("concat axis".into()))?;
    }
    let (outer, _, inner) = axis_split(first, axis)?;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let n = x.shape()[axis];
            out.extend_from_slice(&x.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Array::new(&shape, out)
}

pub(super) fn scan_forward(x: &Array, axis: usize, exclusive: bool) -> Result<Array> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for k in 0..n {
                let idx = (o * n + k) * inner + i;
                if exclusive {
                    out[idx] = acc;
                    acc += d[idx];
                } else {
                    acc += d[idx];
                    out[idx] = acc;
                }
            }
        }
    }
    Array::new(x.shape(), out)
}

/// Reverse scan: `out[k] = sum_{j >= k} g[j]` (inclusive) or `j > k`.
fn scan_backward(g: &Array, axis: usize, exclusive: bool) -> Array {
    let (outer, n, inner) = axis_split(g.shape(), axis).expect("scan axis");
    let d = g.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for k in (0..n).rev() {
                let idx = (o * n + k) * inner + i;
                if exclusive {
                    out[idx] = acc;
                    acc += d[idx];
                } else {
                    acc += d[idx];
                    out[idx] = acc;
                }
            }
        }
    }
    Array::new(g.shape(), out).expect("scan shape")
}

pub(super) fn window_forward(x: &Array, axis: usize, width: usize, leading: bool) -> Result<Array> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            for k in 0..n {
                let (lo, hi) = if leading {
                    (k, (k + width).min(n))
                } else {
                    ((k + 1).saturating_sub(width), k + 1)
                };
                let mut acc = 0.0;
                for l in lo..hi {
                    acc += d[(o * n + l) * inner + i];
                }
                out[(o * n + k) * inner + i] = acc;
            }
        }
    }
    Array::new(x.shape(), out)
}

pub(super) fn softmax_forward(x: &Array, axis: usize, log: bool) -> Result<Array> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).map(|k| math::exp(d[at(k)] - m)).sum();
            let lz = math::ln(z);
            for k in 0..n {
                out[at(k)] = if log { d[at(k)] - m - lz } else { math::exp(d[at(k)] - m) / z };
            }
        }
    }
    Array::new(x.shape(), out)
}

pub(super) fn reduce_forward(kind: Reduce, x: &Array, axis: Option<usize>) -> Result<Array> {
    let Some(axis) = axis else {
        let d = x.data();
        let v = match kind {
            Reduce::Sum => d.iter().sum(),
            Reduce::Mean => d.iter().sum::<f64>() / d.len() as f64,
            Reduce::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        return Ok(Array::scalar(v));
    };
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let vals = (0..n).map(|k| d[(o * n + k) * inner + i]);
            out[o * inner + i] = match kind {
                Reduce::Sum => vals.sum(),
                Reduce::Mean => vals.sum::<f64>() / n as f64,
                Reduce::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            };
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Array::new(&shape, out)
}

fn reduce_backward(kind: Reduce, x: &Array, y: &Array, g: &Array, axis: Option<usize>) -> Array {
    let (outer, n, inner) = match axis {
        Some(a) => axis_split(x.shape(), a).expect("reduce axis"),
        None => (1, x.numel(), 1),
    };
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let gv = g.data()[o * inner + i];
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let s = if kind == Reduce::Mean { gv / n as f64 } else { gv };
                    for k in 0..n {
                        out[(o * n + k) * inner + i] = s;
                    }
                }
                Reduce::Max => {
                    let m = y.data()[o * inner + i];
                    if let Some(k) = (0..n).find(|&k| d[(o * n + k) * inner + i] == m) {
                        out[(o * n + k) * inner + i] = gv;
                    }
                }
            }
        }
    }
    Array::new(x.shape(), out).expect("reduce shape")
}

pub(super) fn backward_node(nodes: &[Node], node: &Node, g: &Array) -> Result<Vec<(Var, Array)>> {
    let val = |v: Var| &nodes[v.0].value;
    let y = &node.value;
    let out = match &node.op {
        Op::Leaf => Vec::new(),
        Op::Unary(kind, x) => {
            let xv = val(*x);
            let data = xv
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                .collect();
            vec![(*x, Array::new(xv.shape(), data)?)]
        }
        Op::Binary(kind, a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let bc = broadcast_kind(av.shape(), bv.shape())?;
            let ad = av.data();
            let bd = bv.data();
            let (na, nb) = (ad.len(), bd.len());
            let full = g.numel();
            let mut ga = vec![0.0; full];
            let mut gb = vec![0.0; full];
            for k in 0..full {
                let (x, z) = (ad[k % na], bd[k % nb]);
                let gk = g.data()[k];
                let (da, db) = match kind {
                    Binary::Add => (1.0, 1.0),
                    Binary::Sub => (1.0, -1.0),
                    Binary::Mul => (z, x),
                    Binary::Div => (1.0 / z, -x / (z * z)),
                };
                ga[k] = gk * da;
                gb[k] = gk * db;
            }
            let ga = match bc {
                Bcast::Left => reduce_to(&ga, av.shape()),
                _ => Array::new(av.shape(), ga)?,
            };
            let gb = match bc {
                Bcast::Right => reduce_to(&gb, bv.shape()),
                _ => Array::new(bv.shape(), gb)?,
            };
            vec![(*a, ga), (*b, gb)]
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2()?;
            let (_, n) = bv.dims2()?;
            let ga = Array::new(&[m, k], matmul_nt(g.data(), bv.data(), m, n, k))?;
            let gb = Array::new(&[k, n], matmul_tn(av.data(), g.data(), m, k, n))?;
            vec![(*a, ga), (*b, gb)]
        }
        Op::Transpose(x) => vec![(*x, g.transpose()?)],
        Op::Reshape(x) => vec![(*x, g.clone().reshaped(val(*x).shape())?)],
        Op::Scan { x, axis, exclusive } => vec![(*x, scan_backward(g, *axis, *exclusive))],
        Op::WindowSum { x, axis, width, leading } => {
            vec![(*x, window_forward(g, *axis, *width, !*leading)?)]
        }
        Op::Softmax { x, axis } | Op::LogSoftmax { x, axis } => {
            let is_log = matches!(node.op, Op::LogSoftmax { .. });
            let (outer, n, inner) = axis_split(y.shape(), *axis)?;
            let mut gx = vec![0.0; y.numel()];
            let (yd, gd) = (y.data(), g.data());
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    if is_log {
                        let gs: f64 = (0..n).map(|k| gd[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = gd[at(k)] - math::exp(yd[at(k)]) * gs;
                        }
                    } else {
                        let dot: f64 = (0..n).map(|k| gd[at(k)] * yd[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
            }
            vec![(*x, Array::new(y.shape(), gx)?)]
        }
        Op::Reduce { kind, x, axis } => vec![(*x, reduce_backward(*kind, val(*x), y, g, *axis))],
        Op::Slice { x, axis, start } => {
            let xv = val(*x);
            let (outer, n, inner) = axis_split(xv.shape(), *axis)?;
            let len = y.shape()[*axis];
            let mut gx = vec![0.0; xv.numel()];
            for o in 0..outer {
                let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                let base = o * n * inner + start * inner;
                gx[base..base + len * inner].copy_from_slice(src);
            }
            vec![(*x, Array::new(xv.shape(), gx)?)]
        }
        Op::Concat { xs, axis } => {
            let mut out = Vec::with_capacity(xs.len());
            let mut start = 0;
            for &x in xs {
                let len = val(x).shape()[*axis];
                out.push((x, slice_forward(g, *axis, start, len)?));
                start += len;
            }
            out
        }
        Op::IndexSelect { x, indices } => {
            let xv = val(*x);
            let (_, c) = xv.dims2()?;
            let mut gx = vec![0.0; xv.numel()];
            for (r, &i) in indices.iter().enumerate() {
                for k in 0..c {
                    gx[i * c + k] += g.data()[r * c + k];
                }
            }
            vec![(*x, Array::new(xv.shape(), gx)?)]
        }
        Op::Pick { x, indices } => {
            let xv = val(*x);
            let (_, c) = xv.dims2()?;
            let mut gx = vec![0.0; xv.numel()];
            for (r, &i) in indices.iter().enumerate() {
                gx[r * c + i] += g.data()[r];
            }
            vec![(*x, Array::new(xv.shape(), gx)?)]
        }
        Op::Custom { inputs, op } => {
            let ins: Vec<&Array> = inputs.iter().map(|&v| val(v)).collect();
            let gs = op.backward(g, &ins, y);
            inputs.iter().copied().zip(gs).collect()
        }
    };
    Ok(out)
}
