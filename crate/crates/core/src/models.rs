//! The two learners (sharing one architecture) and the embedding encoder.
//!
//! Learner: stem -> cell -> flatten -> linear head. In feature mode the
//! stem is a dense map. Images are tiny, so the head sees every position.
//!
//! Encoder: two conv layers with ReLU, flatten, linear projection to `K` (image), or a two-layer ReLU MLP followed by the
//! projection (features).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{init_weights, BoundParams, InitScheme, ParamSet, ParamSpec};
use crate::rng::derive_seed;
use crate::search_space::{cell_forward, op_param_name, CellSpec, Mixing, OpKind, OpSet};
use crate::tensor::Var;

/// Per-example input layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputShape {
    Image { channels: usize, height: usize, width: usize },
    Features(usize),
}

impl InputShape {
    /// Shape of a batch of `b` examples.
    pub fn batch_shape(&self, b: usize) -> Vec<usize> {
        match *self {
            InputShape::Image { channels, height, width } => vec![b, channels, height, width],
            InputShape::Features(f) => vec![b, f],
        }
    }

    /// Spatial positions per channel; 1 for feature vectors.
    pub fn plane(&self) -> usize {
        match *self {
            InputShape::Image { height, width, .. } => height * width,
            InputShape::Features(_) => 1,
        }
    }

    pub fn example_len(&self) -> usize {
        match *self {
            InputShape::Image { channels, height, width } => channels * height * width,
            InputShape::Features(f) => f,
        }
    }

    /// Inverse of [`InputShape::batch_shape`] for a per-example shape.
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [c, h, w] => Ok(InputShape::Image { channels: c, height: h, width: w }),
            [f] => Ok(InputShape::Features(f)),
            _ => Err(Error::InvalidConfig(format!("unsupported example shape {dims:?}"))),
        }
    }

    fn check(&self, batch: &Var<'_>, op: &'static str) -> Result<usize> {
        let shape = batch.shape();
        let b = shape.first().copied().unwrap_or(0);
        if b == 0 || shape != self.batch_shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("batch {shape:?} does not match input {self:?}"),
            });
        }
        Ok(b)
    }
}

/// Which of the two learners a weight set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    W1,
    W2,
}

impl Role {
    fn stream(self) -> u64 {
        match self {
            Role::W1 => 1,
            Role::W2 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub input: InputShape,
    /// Channels (image) or features (vector) carried through the cell.
    pub width: usize,
    pub classes: usize,
    pub cell: CellSpec,
    pub op_set: OpSet,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.classes < 2 || self.input.example_len() == 0 {
            return Err(Error::InvalidConfig(format!(
                "learner needs width >= 1 and classes >= 2 (width {}, classes {})",
                self.width, self.classes
            )));
        }
        for &op in self.op_set.ops() {
            let mismatched = matches!(
                (self.input, op),
                (InputShape::Image { .. }, OpKind::Linear) | (InputShape::Features(_), OpKind::Conv3x3 | OpKind::AvgPool3x3)
            );
            if mismatched {
                return Err(Error::InvalidConfig(format!("operation `{op}` does not apply to {:?} inputs", self.input)));
            }
        }
        Ok(())
    }

    fn head_in(&self) -> usize {
        self.width * self.cell.output_multiplier() * self.input.plane()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.width;
        let mut specs = Vec::new();
        match self.input {
            InputShape::Image { channels, .. } => specs.push(ParamSpec::new(
                "stem.weight",
                &[w, channels, 3, 3],
                InitScheme::ScaledNormal { fan_in: channels * 9 },
            )),
            InputShape::Features(f) => {
                specs.push(ParamSpec::new("stem.weight", &[f, w], InitScheme::ScaledNormal { fan_in: f }))
            }
        }
        for edge in self.cell.edges() {
            for &op in self.op_set.ops() {
                let spec = match op {
                    OpKind::Conv3x3 => ParamSpec::new(
                        op_param_name(edge, op),
                        &[w, w, 3, 3],
                        InitScheme::ScaledNormal { fan_in: w * 9 },
                    ),
                    OpKind::Linear => {
                        ParamSpec::new(op_param_name(edge, op), &[w, w], InitScheme::ScaledNormal { fan_in: w })
                    }
                    _ => continue,
                };
                specs.push(spec);
            }
        }
        let h = self.head_in();
        specs.push(ParamSpec::new("head.weight", &[h, self.classes], InitScheme::ScaledNormal { fan_in: h }));
        specs.push(ParamSpec::new("head.bias", &[self.classes], InitScheme::Zeros));
        specs
    }
}

/// Fresh learner weights. `W1` and `W2` draw from different streams of `seed`.
pub fn init_learner(cfg: &LearnerConfig, role: Role, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    init_weights(derive_seed(seed, role.stream()), &cfg.param_specs())
}

/// `(B, C, H, W)` to `(B, C*H*W)`.
fn flatten(x: Var<'_>) -> Result<Var<'_>> {
    let shape = x.shape();
    let b = shape[0];
    x.reshape(&[b, shape[1..].iter().product()])
}

/// Class logits `(B, C)`.
pub fn learner_forward<'t>(
    cfg: &LearnerConfig,
    mixing: Mixing<'_, 't>,
    weights: &BoundParams<'_, 't>,
    batch: Var<'t>,
) -> Result<Var<'t>> {
    cfg.input.check(&batch, "learner_forward")?;
    let stem = weights.get("stem.weight")?;
    let features = match cfg.input {
        InputShape::Image { .. } => {
            let h = batch.conv2d(stem)?;
            flatten(cell_forward(mixing, weights, &cfg.cell, &cfg.op_set, h)?)?
        }
        InputShape::Features(_) => {
            let h = batch.matmul(stem)?;
            cell_forward(mixing, weights, &cfg.cell, &cfg.op_set, h)?
        }
    };
    features.matmul(weights.get("head.weight")?)?.add_row(weights.get("head.bias")?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input: InputShape,
    pub hidden: usize,
    /// Embedding dimension `K`.
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (h, k) = (self.hidden, self.embed_dim);
        let mut specs = match self.input {
            InputShape::Image { channels, .. } => vec![
                ParamSpec::new("enc.conv1.weight", &[h, channels, 3, 3], InitScheme::ScaledNormal { fan_in: channels * 9 }),
                ParamSpec::new("enc.conv2.weight", &[h, h, 3, 3], InitScheme::ScaledNormal { fan_in: h * 9 }),
            ],
            InputShape::Features(f) => vec![
                ParamSpec::new("enc.fc1.weight", &[f, h], InitScheme::ScaledNormal { fan_in: f }),
                ParamSpec::new("enc.fc1.bias", &[h], InitScheme::Zeros),
                ParamSpec::new("enc.fc2.weight", &[h, h], InitScheme::ScaledNormal { fan_in: h }),
                ParamSpec::new("enc.fc2.bias", &[h], InitScheme::Zeros),
            ],
        };
        let p = h * self.input.plane();
        specs.push(ParamSpec::new("enc.proj.weight", &[p, k], InitScheme::ScaledNormal { fan_in: p }));
        specs.push(ParamSpec::new("enc.proj.bias", &[k], InitScheme::Zeros));
        specs
    }
}

pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ParamSet> {
    if cfg.hidden == 0 || cfg.embed_dim == 0 {
        return Err(Error::InvalidConfig("encoder dimensions must be positive".into()));
    }
    init_weights(derive_seed(seed, 3), &cfg.param_specs())
}

/// Embeddings `(B, K)`.
pub fn encoder_embed<'t>(cfg: &EncoderConfig, weights: &BoundParams<'_, 't>, batch: Var<'t>) -> Result<Var<'t>> {
    cfg.input.check(&batch, "encoder_embed")?;
    let features = match cfg.input {
        InputShape::Image { .. } => batch
            .conv2d(weights.get("enc.conv1.weight")?)?
            .relu()?
            .conv2d(weights.get("enc.conv2.weight")?)?
            .relu()
            .and_then(flatten)?,
        InputShape::Features(_) => batch
            .matmul(weights.get("enc.fc1.weight")?)?
            .add_row(weights.get("enc.fc1.bias")?)?
            .relu()?
            .matmul(weights.get("enc.fc2.weight")?)?
            .add_row(weights.get("enc.fc2.bias")?)?
            .relu()?,
    };
    features.matmul(weights.get("enc.proj.weight")?)?.add_row(weights.get("enc.proj.bias")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::string::String;
    use crate::search_space::{ArchitectureParams, CellOutput};
    use crate::tensor::{grad_check_many, Array, Tape};
    use rand::Rng as _;

    fn image_cfg() -> LearnerConfig {
        LearnerConfig {
            input: InputShape::Image { channels: 1, height: 6, width: 6 },
            width: 3,
            classes: 3,
            cell: CellSpec::default(),
            op_set: OpSet::image_default(),
        }
    }

    fn random(shape: &[usize], seed: u64) -> Array {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn logits_shape_and_determinism() {
        let cfg = image_cfg();
        let w = init_learner(&cfg, Role::W1, 5).unwrap();
        let arch = ArchitectureParams::random(&cfg.cell, &cfg.op_set, 5);
        let x = random(&[4, 1, 6, 6], 1);
        let run = || {
            let tape = Tape::new();
            let a = tape.constant(arch.logits().clone());
            learner_forward(&cfg, Mixing::Continuous(a), &w.bind(&tape, false), tape.constant(x.clone()))
                .unwrap()
                .to_array()
        };
        let y = run();
        assert_eq!(y.shape(), &[4, 3]);
        let bits = |a: &Array| a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&run()));
    }

    #[test]
    fn batch_permutation_permutes_rows() {
        let cfg = image_cfg();
        let w = init_learner(&cfg, Role::W2, 6).unwrap();
        let arch = ArchitectureParams::random(&cfg.cell, &cfg.op_set, 6);
        let x = random(&[4, 1, 6, 6], 2);
        let perm = [2usize, 0, 3, 1];
        let tape = Tape::new();
        let a = tape.constant(arch.logits().clone());
        let bound = w.bind(&tape, false);
        let y = learner_forward(&cfg, Mixing::Continuous(a), &bound, tape.constant(x.clone())).unwrap();
        let yp = learner_forward(&cfg, Mixing::Continuous(a), &bound, tape.constant(x.select_rows(&perm).unwrap()))
            .unwrap();
        let expect = y.value().select_rows(&perm).unwrap();
        assert!(yp.value().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn w1_and_w2_share_signature_but_not_values() {
        let cfg = image_cfg();
        let w1 = init_learner(&cfg, Role::W1, 9).unwrap();
        let w2 = init_learner(&cfg, Role::W2, 9).unwrap();
        assert_eq!(w1.signature(), w2.signature());
        assert_ne!(w1.flatten(), w2.flatten());
    }

    #[test]
    fn architecture_gradient_is_nonzero() {
        let cfg = image_cfg();
        let w = init_learner(&cfg, Role::W1, 1).unwrap();
        let tape = Tape::new();
        let a = tape.leaf(ArchitectureParams::random(&cfg.cell, &cfg.op_set, 2).into_logits());
        let y = learner_forward(&cfg, Mixing::Continuous(a), &w.bind(&tape, false), tape.constant(random(&[3, 1, 6, 6], 3)))
            .unwrap();
        let loss = y.cross_entropy(&[0, 1, 2]).unwrap().mean().unwrap();
        let g = tape.gradients(loss, &[a]).unwrap();
        assert!(g[0].norm() > 0.0);
    }

    #[test]
    fn rejects_wrong_batch_shape() {
        let cfg = image_cfg();
        let w = init_learner(&cfg, Role::W1, 1).unwrap();
        let tape = Tape::new();
        let a = tape.constant(ArchitectureParams::zeros(&cfg.cell, &cfg.op_set).into_logits());
        let r = learner_forward(&cfg, Mixing::Continuous(a), &w.bind(&tape, false), tape.constant(Array::zeros(&[2, 1, 5, 6])));
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn linear_op_rejected_for_images() {
        let mut cfg = image_cfg();
        cfg.op_set = OpSet::linear_default();
        assert!(init_learner(&cfg, Role::W1, 0).is_err());
    }

    #[test]
    fn feature_learner_with_concat() {
        let cfg = LearnerConfig {
            input: InputShape::Features(5),
            width: 4,
            classes: 2,
            cell: CellSpec::new(2, CellOutput::Concat).unwrap(),
            op_set: OpSet::linear_default(),
        };
        let w = init_learner(&cfg, Role::W1, 1).unwrap();
        assert_eq!(w.get("head.weight").unwrap().shape(), &[8, 2]);
        let tape = Tape::new();
        let a = tape.constant(ArchitectureParams::zeros(&cfg.cell, &cfg.op_set).into_logits());
        let y = learner_forward(&cfg, Mixing::Continuous(a), &w.bind(&tape, false), tape.constant(random(&[7, 5], 1)))
            .unwrap();
        assert_eq!(y.shape(), vec![7, 2]);
    }

    fn enc_cfg() -> EncoderConfig {
        EncoderConfig { input: InputShape::Image { channels: 1, height: 5, width: 5 }, hidden: 3, embed_dim: 16 }
    }

    #[test]
    fn embedding_shape_and_purity() {
        let cfg = enc_cfg();
        let v = init_encoder(&cfg, 2).unwrap();
        let tape = Tape::new();
        let one = random(&[1, 1, 5, 5], 4);
        let batch = Array::concat_rows(&[&one; 6]).unwrap();
        let e = encoder_embed(&cfg, &v.bind(&tape, false), tape.constant(batch)).unwrap();
        assert_eq!(e.shape(), vec![6, 16]);
        let e = e.value();
        for b in 1..6 {
            assert_eq!(e.row(b), e.row(0));
        }
    }

    #[test]
    fn encoder_gradient_check() {
        for cfg in [enc_cfg(), EncoderConfig { input: InputShape::Features(4), hidden: 5, embed_dim: 16 }] {
            let v = init_encoder(&cfg, 3).unwrap();
            let x = random(&cfg.input.batch_shape(3), 5);
            let names: Vec<String> = v.names().map(Into::into).collect();
            let err = grad_check_many(
                |tape, xs| {
                    let set = ParamSet::from_entries(names.iter().cloned().zip(xs.iter().map(|x| x.to_array())).collect());
                    let bound = BoundParams::from_vars(&set, xs.to_vec())?;
                    let e = encoder_embed(&cfg, &bound, tape.constant(x.clone()))?;
                    // a nonlinear reduction keeps the check from being trivially linear
                    e.mul(e)?.sum()
                },
                &v.values().cloned().collect::<Vec<_>>(),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }
}
