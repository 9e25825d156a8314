use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::array::Array;
use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};

/// Restores the tape's recording flag when dropped.
struct RecordingGuard<'t> {
    tape: &'t Tape,
    previous: bool,
}

impl Drop for RecordingGuard<'_> {
    fn drop(&mut self) {
        self.tape.set_recording(self.previous);
    }
}

/// Gradients of every differentiable leaf, keyed by node.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: BTreeMap<usize, Array>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Array> {
        self.by_node.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

impl Tape {
    /// Reverse sweep from a single-valued `output` to each tensor in `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves recorded and
    /// can be differentiated again; otherwise they are constants. Tensors in
    /// `wrt` that do not influence `output` receive zeros.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        if !self.owns(&output) || wrt.iter().any(|w| !self.owns(w)) {
            return Err(Error::NotOnTape);
        }
        let out_shape = output.shape();
        if output.numel() != 1 {
            return Err(Error::NotScalar(out_shape));
        }
        if let Some(w) = wrt.iter().find(|w| !w.requires_grad()) {
            return Err(Error::NotDifferentiable(w.id));
        }

        let last = output.id;
        let mut on_path = vec![false; last + 1];
        for w in wrt {
            if w.id <= last {
                on_path[w.id] = true;
            }
        }
        for id in 0..=last {
            if on_path[id] {
                continue;
            }
            let (_, inputs, requires) = self.node_info(id);
            on_path[id] = requires && inputs.iter().any(|&i| on_path[i]);
        }

        let _guard = RecordingGuard { tape: self, previous: self.set_recording(create_graph) };
        let mut grads: Vec<Option<Var<'t>>> = vec![None; last + 1];
        if on_path[last] {
            grads[last] = Some(self.constant(Array::full(&out_shape, 1.0)));
        }
        for id in (0..=last).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, inputs, requires) = self.node_info(id);
            if !requires || inputs.is_empty() {
                continue;
            }
            let needs: Vec<bool> = inputs.iter().map(|&i| on_path[i]).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let contributions = self.vjp(&op, &inputs, id, g, &needs)?;
            for ((input, contribution), need) in inputs.iter().zip(contributions).zip(needs) {
                if !need {
                    continue;
                }
                let Some(c) = contribution else { continue };
                grads[*input] = Some(match grads[*input] {
                    Some(acc) => acc.add(c)?,
                    None => c,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Array::zeros(w.value().shape()))),
            })
            .collect()
    }

    /// First-order gradients as plain arrays.
    pub fn gradients(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Array>> {
        Ok(self.grad(output, wrt, false)?.into_iter().map(|v| v.to_array()).collect())
    }

    /// Gradients of `output` with respect to every differentiable leaf on
    /// the tape.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let leaves: Vec<Var<'_>> = (0..self.len())
            .filter(|&id| {
                let (op, _, requires) = self.node_info(id);
                requires && matches!(op, Op::Leaf)
            })
            .map(|id| self.var(id))
            .collect();
        let grads = self.gradients(output, &leaves)?;
        Ok(Gradients { by_node: leaves.iter().map(|l| l.id).zip(grads).collect() })
    }

    /// Vector-Jacobian products for one node, written in terms of tape
    /// operations so that they can be differentiated again.
    fn vjp<'t>(
        &'t self,
        op: &Op,
        inputs: &[usize],
        out_id: usize,
        g: Var<'t>,
        needs: &[bool],
    ) -> Result<Vec<Option<Var<'t>>>> {
        let x = |k: usize| self.var(inputs[k]);
        let out = self.var(out_id);
        let want = |k: usize| needs.get(k).copied().unwrap_or(false);
        let single = |v: Result<Var<'t>>| -> Result<Vec<Option<Var<'t>>>> { Ok(vec![Some(v?)]) };

        match op {
            Op::Leaf | Op::Constant => Ok(vec![]),
            Op::Add => Ok(vec![Some(g), Some(g)]),
            Op::Sub => Ok(vec![Some(g), if want(1) { Some(g.neg()?) } else { None }]),
            Op::Mul => {
                let ga = if want(0) { Some(g.mul(x(1))?) } else { None };
                let gb = if want(1) {
                    #[cfg(test)]
                    if self.corrupt_mul_backward.get() {
                        return Ok(vec![ga, Some(g.mul(x(0))?.scale(1.5)?)]);
                    }
                    Some(g.mul(x(0))?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }
            Op::Div => {
                let ga = if want(0) { Some(g.div(x(1))?) } else { None };
                let gb = if want(1) { Some(g.mul(out)?.div(x(1))?.neg()?) } else { None };
                Ok(vec![ga, gb])
            }
            Op::Affine { alpha } => single(g.scale(*alpha)),
            Op::MulScalar => {
                let ga = if want(0) { Some(g.mul_scalar(x(1))?) } else { None };
                let gs = if want(1) {
                    let shape = x(1).shape();
                    Some(g.mul(x(0))?.sum()?.reshape(&shape)?)
                } else {
                    None
                };
                Ok(vec![ga, gs])
            }
            Op::Matmul => {
                let ga = if want(0) { Some(g.matmul(x(1).transpose()?)?) } else { None };
                let gb = if want(1) { Some(x(0).transpose()?.matmul(g)?) } else { None };
                Ok(vec![ga, gb])
            }
            Op::Transpose => single(g.transpose()),
            Op::Relu => {
                let mask: Vec<f64> = x(0)
                    .value()
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                let mask = self.constant(Array::new(&g.shape(), mask)?);
                single(g.mul(mask))
            }
            Op::Sigmoid => single(g.mul(out)?.mul(out.affine(-1.0, 1.0)?)),
            Op::Exp => single(g.mul(out)),
            Op::Log => single(g.div(x(0))),
            Op::Sqrt => single(g.div(out.scale(2.0)?)),
            Op::Softmax { axis } => {
                let len = out.shape()[*axis];
                let inner = g.mul(out)?.sum_axis(*axis)?.broadcast_axis(*axis, len)?;
                single(g.sub(inner)?.mul(out))
            }
            Op::SumAll => single(g.expand(&x(0).shape())),
            Op::ExpandScalar => single(g.sum()?.reshape(&x(0).shape())),
            Op::SumAxis { axis } => {
                let len = x(0).shape()[*axis];
                single(g.broadcast_axis(*axis, len))
            }
            Op::BroadcastAxis { axis } => single(g.sum_axis(*axis)),
            Op::Reshape => single(g.reshape(&x(0).shape())),
            Op::Concat { axis } => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(inputs.len());
                for k in 0..inputs.len() {
                    let len = x(k).shape()[*axis];
                    parts.push(if want(k) { Some(g.slice_axis(*axis, start, len)?) } else { None });
                    start += len;
                }
                Ok(parts)
            }
            Op::SliceAxis { axis, start } => {
                let total = x(0).shape()[*axis];
                single(g.pad_axis(*axis, *start, total))
            }
            Op::PadAxis { axis, start } => {
                let len = x(0).shape()[*axis];
                single(g.slice_axis(*axis, *start, len))
            }
            Op::CrossEntropy { labels } => {
                let logits = x(0);
                let shape = logits.shape();
                let (batch, classes) = (shape[0], shape[1]);
                let mut onehot = Array::zeros(&shape);
                for (b, &y) in labels.iter().enumerate() {
                    onehot.data_mut()[b * classes + y] = 1.0;
                }
                let diff = logits.softmax(1)?.sub(self.constant(onehot))?;
                let scale = g.reshape(&[batch, 1])?.broadcast_axis(1, classes)?;
                single(diff.mul(scale))
            }
            Op::Conv2d => {
                let gx = if want(0) { Some(g.conv2d(x(1).kernel_flip()?)?) } else { None };
                let gk = if want(1) { Some(x(0).conv2d_kernel_grad(g)?) } else { None };
                Ok(vec![gx, gk])
            }
            Op::Conv2dKernelGrad => {
                // inputs are (x, upstream); g has kernel shape
                let gx = if want(0) { Some(x(1).conv2d(g.kernel_flip()?)?) } else { None };
                let gu = if want(1) { Some(x(0).conv2d(g)?) } else { None };
                Ok(vec![gx, gu])
            }
            Op::KernelFlip => single(g.kernel_flip()),
            Op::AvgPool3 => single(g.avg_pool3()),
        }
    }
}
