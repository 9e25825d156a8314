use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use super::array::{numel, Array};
use super::kernels::{self, ConvDims};
use super::tape::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};

fn same_tape(a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if core::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(Error::NotOnTape)
    }
}

fn invalid(op: &'static str, detail: alloc::string::String) -> Error {
    Error::InvalidAttribute { op, detail }
}

impl<'t> Var<'t> {
    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        let out = Array::new(v.shape(), data)?;
        self.tape.push_op(op, &[self], out)
    }

    fn zip(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(op.name(), format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Array::new(a.shape(), data)?;
        self.tape.push_op(op, &[self, other], out)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, Op::Div, |a, b| a / b)
    }

    /// `alpha * x + beta`
    pub fn affine(self, alpha: f64, beta: f64) -> Result<Var<'t>> {
        self.unary(Op::Affine { alpha }, |x| alpha * x + beta)
    }

    pub fn scale(self, alpha: f64) -> Result<Var<'t>> {
        self.affine(alpha, 0.0)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.affine(-1.0, 0.0)
    }

    /// Multiplies every element by a single-valued tensor.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &s)?;
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar operand has shape {:?}", sv.shape())));
        }
        let k = sv.data()[0];
        let v = self.value();
        let out = Array::new(v.shape(), v.data().iter().map(|x| x * k).collect())?;
        self.tape.push_op(Op::MulScalar, &[self, s], out)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = Array::new(&[m, n], kernels::matmul(a.data(), b.data(), m, k, n))?;
        self.tape.push_op(Op::Matmul, &[self, other], out)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(shape_err("transpose", format!("rank-2 input expected, got {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let out = Array::new(&[c, r], kernels::transpose(a.data(), r, c))?;
        self.tape.push_op(Op::Transpose, &[self], out)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp, libm::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Op::Log, libm::log)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt, libm::sqrt)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.rank() {
            return Err(invalid("softmax", format!("axis {axis} out of range for rank {}", v.rank())));
        }
        let out = Array::new(v.shape(), kernels::softmax(v.data(), v.shape(), axis))?;
        self.tape.push_op(Op::Softmax { axis }, &[self], out)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let total = self.value().data().iter().sum();
        self.tape.push_op(Op::SumAll, &[self], Array::scalar(total))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if v.numel() != 1 {
            return Err(shape_err("expand", format!("expected one element, got {:?}", v.shape())));
        }
        let out = Array::new(shape, alloc::vec![v.data()[0]; numel(shape)])?;
        self.tape.push_op(Op::ExpandScalar, &[self], out)
    }

    /// Sums along `axis`, keeping it with length one.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.rank() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for rank {}", v.rank())));
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = 1;
        let out = Array::new(&shape, kernels::sum_axis(v.data(), v.shape(), axis))?;
        self.tape.push_op(Op::SumAxis { axis }, &[self], out)
    }

    /// Repeats a length-one `axis` `len` times.
    pub fn broadcast_axis(self, axis: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.rank() || v.shape()[axis] != 1 || len == 0 {
            return Err(invalid(
                "broadcast_axis",
                format!("cannot broadcast axis {axis} of {:?} to {len}", v.shape()),
            ));
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let out = Array::new(&shape, kernels::broadcast_axis(v.data(), v.shape(), axis, len))?;
        self.tape.push_op(Op::BroadcastAxis { axis }, &[self], out)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.to_array().reshape(shape)?;
        self.tape.push_op(Op::Reshape, &[self], out)
    }

    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.rank() || len == 0 || start + len > v.shape()[axis] {
            return Err(invalid(
                "slice_axis",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, v.shape()),
            ));
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let out = Array::new(&shape, kernels::slice_axis(v.data(), v.shape(), axis, start, len))?;
        self.tape.push_op(Op::SliceAxis { axis, start }, &[self], out)
    }

    /// Embeds this tensor at `start` inside a zero tensor whose `axis` has
    /// length `total`.
    pub fn pad_axis(self, axis: usize, start: usize, total: usize) -> Result<Var<'t>> {
        let v = self.value();
        if axis >= v.rank() || start + v.shape()[axis] > total {
            return Err(invalid(
                "pad_axis",
                format!("cannot place {:?} at {start} of {total} on axis {axis}", v.shape()),
            ));
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = total;
        let out = Array::new(&shape, kernels::pad_axis(v.data(), v.shape(), axis, start, total))?;
        self.tape.push_op(Op::PadAxis { axis, start }, &[self], out)
    }

    /// Per-row cross-entropy of logits `(B, C)` against integer labels,
    /// fused with a max-shifted log-sum-exp. Returns shape `(B)`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {:?} with {} labels", v.shape(), labels.len()),
            ));
        }
        let classes = v.shape()[1];
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
        let out = Array::from_vec(kernels::cross_entropy(v.data(), labels, classes));
        let labels: Rc<[usize]> = labels.into();
        self.tape.push_op(Op::CrossEntropy { labels }, &[self], out)
    }

    /// Stride-1 3x3 convolution with zero "same" padding.
    /// Input `(B, Cin, H, W)`, kernel `(Cout, Cin, 3, 3)`.
    pub fn conv2d(self, kernel: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &kernel)?;
        let (x, k) = (self.value(), kernel.value());
        let dims = conv_dims(x.shape(), k.shape())?;
        let out = Array::new(
            &[dims.batch, dims.out_ch, dims.height, dims.width],
            kernels::conv2d(x.data(), k.data(), dims),
        )?;
        self.tape.push_op(Op::Conv2d, &[self, kernel], out)
    }

    /// Gradient of a 3x3 convolution with respect to its kernel, given the
    /// input `self` and the output gradient `g`.
    pub(crate) fn conv2d_kernel_grad(self, g: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &g)?;
        let (x, gv) = (self.value(), g.value());
        let (xs, gs) = (x.shape(), gv.shape());
        if xs.len() != 4 || gs.len() != 4 || xs[0] != gs[0] || xs[2..] != gs[2..] {
            return Err(shape_err("conv2d_kernel_grad", format!("{xs:?} vs {gs:?}")));
        }
        let dims = ConvDims { batch: xs[0], in_ch: xs[1], out_ch: gs[1], height: xs[2], width: xs[3] };
        let out = Array::new(
            &[dims.out_ch, dims.in_ch, 3, 3],
            kernels::conv2d_kernel_grad(x.data(), gv.data(), dims),
        )?;
        self.tape.push_op(Op::Conv2dKernelGrad, &[self, g], out)
    }

    pub(crate) fn kernel_flip(self) -> Result<Var<'t>> {
        let k = self.value();
        let s = k.shape();
        if s.len() != 4 || s[2] != 3 || s[3] != 3 {
            return Err(shape_err("kernel_flip", format!("{s:?}")));
        }
        let out = Array::new(&[s[1], s[0], 3, 3], kernels::kernel_flip(k.data(), s[0], s[1]))?;
        self.tape.push_op(Op::KernelFlip, &[self], out)
    }

    /// 3x3 average pooling, stride 1, zero padding counted in the mean.
    pub fn avg_pool3(self) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 {
            return Err(shape_err("avg_pool3", format!("expected (B, C, H, W), got {s:?}")));
        }
        let out = Array::new(s, kernels::avg_pool3(x.data(), s[0] * s[1], s[2], s[3]))?;
        self.tape.push_op(Op::AvgPool3, &[self], out)
    }

    /// `(B, C, H, W) -> (B, C)` spatial mean.
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("expected (B, C, H, W), got {s:?}")));
        }
        let plane = (s[2] * s[3]) as f64;
        self.reshape(&[s[0], s[1], s[2] * s[3]])?
            .sum_axis(2)?
            .reshape(&[s[0], s[1]])?
            .scale(1.0 / plane)
    }

    /// Adds a length-`N` vector to every row of a `(B, N)` matrix.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let s = self.shape();
        let n = bias.numel();
        if s.len() != 2 || s[1] != n {
            return Err(shape_err("add_row", format!("{s:?} + ({n})")));
        }
        let b = bias.reshape(&[1, n])?.broadcast_axis(0, s[0])?;
        self.add(b)
    }

    /// Sum of the element-wise product.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mul(other)?.sum()
    }
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| invalid("concat", "no inputs".into()))?;
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(invalid("concat", format!("axis {axis} out of range for rank {}", base.len())));
    }
    let mut total = 0;
    for (p, v) in parts.iter().zip(&values) {
        same_tape(first, p)?;
        let s = v.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(shape_err("concat", format!("{s:?} vs {base:?}")));
        }
        total += s[axis];
    }
    let (outer, _, inner) = kernels::axis_split(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis];
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    tape.push_op(Op::Concat { axis }, parts, Array::new(&shape, data)?)
}

pub(crate) fn conv_dims(xs: &[usize], ks: &[usize]) -> Result<ConvDims> {
    if xs.len() != 4 || ks.len() != 4 || ks[1] != xs[1] || ks[2] != 3 || ks[3] != 3 {
        return Err(shape_err("conv2d", format!("input {xs:?} with kernel {ks:?}")));
    }
    Ok(ConvDims { batch: xs[0], in_ch: xs[1], out_ch: ks[0], height: xs[2], width: xs[3] })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Generic primitive dispatch over a list of inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Affine { alpha: f64, beta: f64 },
    MulScalar,
    Matmul,
    Transpose,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Softmax { axis: usize },
    Sum,
    Mean,
    SumAxis { axis: usize },
    BroadcastAxis { axis: usize, len: usize },
    Reshape { shape: Vec<usize> },
    Concat { axis: usize },
    SliceAxis { axis: usize, start: usize, len: usize },
    CrossEntropy { labels: Vec<usize> },
    Conv2d,
    AvgPool3,
    GlobalAvgPool,
}

pub fn apply<'t>(tape: &'t Tape, prim: &Primitive, inputs: &[Var<'t>]) -> Result<Var<'t>> {
    let arity = match prim {
        Primitive::Add
        | Primitive::Sub
        | Primitive::Mul
        | Primitive::Div
        | Primitive::MulScalar
        | Primitive::Matmul
        | Primitive::Conv2d => Some(2),
        Primitive::Concat { .. } => None,
        _ => Some(1),
    };
    match arity {
        Some(n) if inputs.len() != n => {
            return Err(invalid("apply", format!("{prim:?} takes {n} inputs, got {}", inputs.len())));
        }
        None if inputs.is_empty() => return Err(invalid("apply", "concat needs inputs".into())),
        _ => {}
    }
    if inputs.iter().any(|v| !tape.owns(v)) {
        return Err(Error::NotOnTape);
    }
    let x = inputs[0];
    match prim {
        Primitive::Add => x.add(inputs[1]),
        Primitive::Sub => x.sub(inputs[1]),
        Primitive::Mul => x.mul(inputs[1]),
        Primitive::Div => x.div(inputs[1]),
        Primitive::Affine { alpha, beta } => x.affine(*alpha, *beta),
        Primitive::MulScalar => x.mul_scalar(inputs[1]),
        Primitive::Matmul => x.matmul(inputs[1]),
        Primitive::Transpose => x.transpose(),
        Primitive::Relu => x.relu(),
        Primitive::Sigmoid => x.sigmoid(),
        Primitive::Exp => x.exp(),
        Primitive::Log => x.log(),
        Primitive::Sqrt => x.sqrt(),
        Primitive::Softmax { axis } => x.softmax(*axis),
        Primitive::Sum => x.sum(),
        Primitive::Mean => x.mean(),
        Primitive::SumAxis { axis } => x.sum_axis(*axis),
        Primitive::BroadcastAxis { axis, len } => x.broadcast_axis(*axis, *len),
        Primitive::Reshape { shape } => x.reshape(shape),
        Primitive::Concat { axis } => concat(inputs, *axis),
        Primitive::SliceAxis { axis, start, len } => x.slice_axis(*axis, *start, *len),
        Primitive::CrossEntropy { labels } => x.cross_entropy(labels),
        Primitive::Conv2d => x.conv2d(inputs[1]),
        Primitive::AvgPool3 => x.avg_pool3(),
        Primitive::GlobalAvgPool => x.global_avg_pool(),
    }
}
