use alloc::format;
use alloc::vec::Vec;

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function of several inputs
/// against central finite differences.
///
/// Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check_many<F>(f: F, inputs: &[Array], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidAttribute { op: "grad_check", detail: format!("step {step} must be positive") });
    }
    let analytic = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&tape, &leaves)?;
        tape.gradients(y, &leaves)?
    };

    let eval = |probe: &[Array]| -> Result<f64> {
        let tape = Tape::new();
        let consts: Vec<Var<'_>> = probe.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&tape, &consts)?;
        if y.numel() != 1 {
            return Err(Error::NotScalar(y.shape()));
        }
        let v = y.item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check", node: y.id() });
        }
        Ok(v)
    };

    let mut probe: Vec<Array> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[i];
            worst = worst.max(libm::fabs(a - numeric) / libm::fabs(a).max(1.0));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Array, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, xs| f(tape, xs[0]), core::slice::from_ref(x), step)
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Relu,
    Sigmoid,
    Softmax,
    Square,
    Exp,
    Plain,
}

#[derive(Clone, Copy, Debug)]
enum Layer {
    /// `h W + b`, then an activation.
    Dense { act: Act },
    /// `[h, sigmoid(h)]` along the feature axis.
    Concat,
    /// `h * g` with a free tensor `g` of the same shape.
    Gate,
}

#[derive(Clone, Copy, Debug)]
enum Head {
    CrossEntropy,
    LogSigmoidSum,
    MeanSquare,
}

/// Structure of a random network; the shapes of its inputs follow from it.
#[derive(Clone, Debug)]
pub struct RandomNetwork {
    batch: usize,
    /// `(channels, side)` of an image input with a conv stem.
    image: Option<(usize, usize)>,
    width: usize,
    layers: Vec<Layer>,
    head: Head,
    labels: Vec<usize>,
    inputs: Vec<Array>,
}

fn uniform_array(rng: &mut crate::rng::Rng, shape: &[usize], scale: f64) -> Array {
    use rand::Rng as _;
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

impl RandomNetwork {
    /// At most three layers drawn from dense maps with assorted activations,
    /// concatenation and gating, optionally behind a conv/pool stem, ending
    /// in one of several scalar losses.
    pub fn sample(seed: u64) -> RandomNetwork {
        use rand::Rng as _;
        let mut rng = crate::rng::seeded(seed);
        let batch = rng.random_range(2..=3);
        let image = rng.random_bool(0.3).then(|| (rng.random_range(1..=2), 4));
        let mut width = rng.random_range(2..=4);
        let mut inputs = Vec::new();
        let mut layers = Vec::new();
        match image {
            Some((c, side)) => {
                inputs.push(uniform_array(&mut rng, &[batch, c, side, side], 1.0));
                inputs.push(uniform_array(&mut rng, &[width, c, 3, 3], 0.5));
            }
            None => inputs.push(uniform_array(&mut rng, &[batch, width], 1.0)),
        }
        let depth = rng.random_range(1..=if image.is_some() { 2 } else { 3 });
        for _ in 0..depth {
            let layer = match rng.random_range(0..8) {
                0 => Layer::Concat,
                1 => Layer::Gate,
                _ => Layer::Dense {
                    act: [Act::Relu, Act::Sigmoid, Act::Softmax, Act::Square, Act::Exp, Act::Plain][rng.random_range(0..6)],
                },
            };
            match layer {
                Layer::Dense { .. } => {
                    let out = rng.random_range(2..=4);
                    inputs.push(uniform_array(&mut rng, &[width, out], 0.8));
                    inputs.push(uniform_array(&mut rng, &[out], 0.3));
                    width = out;
                }
                Layer::Concat => width *= 2,
                Layer::Gate => inputs.push(uniform_array(&mut rng, &[batch, width], 1.0)),
            }
            layers.push(layer);
        }
        let head = [Head::CrossEntropy, Head::LogSigmoidSum, Head::MeanSquare][rng.random_range(0..3)];
        let labels = (0..batch).map(|_| rng.random_range(0..width)).collect();
        RandomNetwork { batch, image, width, layers, head, labels, inputs }
    }

    pub fn inputs(&self) -> &[Array] {
        &self.inputs
    }

    pub fn depth(&self) -> usize {
        self.layers.len() + usize::from(self.image.is_some())
    }

    pub fn forward<'t>(&self, _tape: &'t Tape, xs: &[Var<'t>]) -> Result<Var<'t>> {
        let mut next = 0;
        let mut take = || {
            next += 1;
            xs[next - 1]
        };
        let mut h = take();
        if self.image.is_some() {
            let k = take();
            h = h.conv2d(k)?.relu()?.avg_pool3()?.global_avg_pool()?;
        }
        for layer in &self.layers {
            h = match *layer {
                Layer::Dense { act } => {
                    let (w, b) = (take(), take());
                    let z = h.matmul(w)?.add_row(b)?;
                    match act {
                        Act::Relu => z.relu()?,
                        Act::Sigmoid => z.sigmoid()?,
                        Act::Softmax => z.softmax(1)?,
                        Act::Square => z.mul(z)?,
                        Act::Exp => z.scale(0.5)?.exp()?,
                        Act::Plain => z,
                    }
                }
                Layer::Concat => super::ops::concat(&[h, h.sigmoid()?], 1)?,
                Layer::Gate => h.mul(take())?,
            };
        }
        debug_assert_eq!(h.shape(), [self.batch, self.width]);
        match self.head {
            Head::CrossEntropy => h.cross_entropy(&self.labels)?.mean(),
            Head::LogSigmoidSum => h.sigmoid()?.log()?.sum(),
            Head::MeanSquare => h.mul(h)?.mean(),
        }
    }

    /// [`grad_check_many`] over every input of the network.
    pub fn check(&self, step: f64) -> Result<f64> {
        grad_check_many(|tape, xs| self.forward(tape, xs), &self.inputs, step)
    }
}
