use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::fmt;

use super::array::Array;
use crate::error::{Error, Result};

/// Recorded operation kinds together with the attributes their backward
/// rules need.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Affine { alpha: f64 },
    MulScalar,
    Matmul,
    Transpose,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Softmax { axis: usize },
    SumAll,
    ExpandScalar,
    SumAxis { axis: usize },
    BroadcastAxis { axis: usize },
    Reshape,
    Concat { axis: usize },
    SliceAxis { axis: usize, start: usize },
    PadAxis { axis: usize, start: usize },
    CrossEntropy { labels: Rc<[usize]> },
    Conv2d,
    Conv2dKernelGrad,
    KernelFlip,
    AvgPool3,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Affine { .. } => "affine",
            Op::MulScalar => "mul_scalar",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Softmax { .. } => "softmax",
            Op::SumAll => "sum",
            Op::ExpandScalar => "expand",
            Op::SumAxis { .. } => "sum_axis",
            Op::BroadcastAxis { .. } => "broadcast_axis",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::SliceAxis { .. } => "slice_axis",
            Op::PadAxis { .. } => "pad_axis",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Conv2d => "conv2d",
            Op::Conv2dKernelGrad => "conv2d_kernel_grad",
            Op::KernelFlip => "kernel_flip",
            Op::AvgPool3 => "avg_pool3",
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Rc<Array>,
    pub(crate) op: Op,
    pub(crate) inputs: Vec<usize>,
    pub(crate) requires_grad: bool,
}

/// Define-by-run differentiation tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. Backward rules are themselves expressed as tape operations, which
/// makes gradients differentiable again when `create_graph` is requested.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
    #[cfg(test)]
    pub(crate) corrupt_mul_backward: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
            #[cfg(test)]
            corrupt_mul_backward: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        let requires_grad = self.recording.get();
        self.push_raw(value, Op::Leaf, Vec::new(), requires_grad)
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push_raw(value, Op::Constant, Vec::new(), false)
    }

    pub(crate) fn set_recording(&self, on: bool) -> bool {
        self.recording.replace(on)
    }

    fn push_raw(&self, value: Array, op: Op, inputs: Vec<usize>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value: Rc::new(value), op, inputs, requires_grad });
        Var { tape: self, id }
    }

    /// Records the result of an operation. Non-finite outputs are rejected
    /// and name the node they would have occupied.
    pub(crate) fn push_op(&self, op: Op, inputs: &[Var<'_>], value: Array) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name(), node: self.len() });
        }
        let requires_grad = self.recording.get() && inputs.iter().any(|v| v.requires_grad());
        if requires_grad {
            let ids = inputs.iter().map(|v| v.id).collect();
            Ok(self.push_raw(value, op, ids, true))
        } else {
            Ok(self.push_raw(value, Op::Constant, Vec::new(), false))
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn node_info(&self, id: usize) -> (Op, Vec<usize>, bool) {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        (n.op.clone(), n.inputs.clone(), n.requires_grad)
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    pub(crate) fn owns(&self, v: &Var<'_>) -> bool {
        core::ptr::eq(self, v.tape) && v.id < self.len()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.tape.value_of(self.id)
    }

    /// Owned copy of the current value.
    pub fn to_array(&self) -> Array {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }
}
