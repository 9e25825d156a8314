//! Per-example training weights from validation mistakes.
//!
//! For a training batch of size `B_tr` and a validation batch of size
//! `B_val`:
//!
//! - `X[i, j] = softmax_j(score(e_i, e_j))`, visual similarity of embeddings;
//! - `Z[i, j] = 1{y_i = y_j}`, label similarity;
//! - `u_j` = cross-entropy of validation example `j` under the first learner;
//! - `a_i = sigmoid(sum_j X[i, j] Z[i, j] u_j r_j)`.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Array, Var};

/// Score used inside the visual-similarity softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SimilarityMetric {
    #[default]
    Dot,
    Cosine,
    /// Negative squared Euclidean distance.
    NegL2,
}

impl SimilarityMetric {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::Dot => "dot",
            SimilarityMetric::Cosine => "cosine",
            SimilarityMetric::NegL2 => "l2",
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(SimilarityMetric::Dot),
            "cosine" => Ok(SimilarityMetric::Cosine),
            "l2" | "neg-l2" => Ok(SimilarityMetric::NegL2),
            other => Err(Error::InvalidConfig(format!("unknown similarity metric `{other}`"))),
        }
    }
}

/// Factors replaced by all-ones vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Ablation {
    pub no_x: bool,
    pub no_z: bool,
    pub no_u: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation { no_x: false, no_z: false, no_u: false };
    pub const ALL: Ablation = Ablation { no_x: true, no_z: true, no_u: true };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ReweightConfig {
    pub metric: SimilarityMetric,
    pub ablation: Ablation,
}

const NORM_EPS: f64 = 1e-12;

fn row_sq_norms(e: Var<'_>) -> Result<Var<'_>> {
    e.mul(e)?.sum_axis(1)
}

/// `(B_tr, B_val)` row-stochastic similarity matrix.
pub fn visual_similarity<'t>(train_emb: Var<'t>, val_emb: Var<'t>, metric: SimilarityMetric) -> Result<Var<'t>> {
    let (ts, vs) = (train_emb.shape(), val_emb.shape());
    if ts.len() != 2 || vs.len() != 2 || ts[1] != vs[1] {
        return Err(Error::ShapeMismatch {
            op: "visual_similarity",
            detail: format!("embeddings {ts:?} and {vs:?}"),
        });
    }
    let (b_tr, b_val) = (ts[0], vs[0]);
    let scores = match metric {
        SimilarityMetric::Dot => train_emb.matmul(val_emb.transpose()?)?,
        SimilarityMetric::Cosine => {
            let unit = |e: Var<'t>| -> Result<Var<'t>> {
                let len = e.shape()[1];
                let n = row_sq_norms(e)?.affine(1.0, NORM_EPS)?.sqrt()?;
                e.div(n.broadcast_axis(1, len)?)
            };
            unit(train_emb)?.matmul(unit(val_emb)?.transpose()?)?
        }
        SimilarityMetric::NegL2 => {
            // -(|t|^2 - 2 t.v + |v|^2)
            let cross = train_emb.matmul(val_emb.transpose()?)?.scale(2.0)?;
            let t2 = row_sq_norms(train_emb)?.broadcast_axis(1, b_val)?;
            let v2 = row_sq_norms(val_emb)?.transpose()?.broadcast_axis(0, b_tr)?;
            cross.sub(t2)?.sub(v2)?
        }
    };
    scores.softmax(1)
}

/// `Z[i, j] = 1` iff the labels agree.
pub fn label_similarity(train_labels: &[usize], val_labels: &[usize], classes: usize) -> Result<Array> {
    for (index, &label) in train_labels.iter().chain(val_labels).enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
    }
    let data = train_labels
        .iter()
        .flat_map(|&yi| val_labels.iter().map(move |&yj| if yi == yj { 1.0 } else { 0.0 }))
        .collect();
    Array::new(&[train_labels.len(), val_labels.len()], data)
}

/// Per-example cross-entropy `(B_val)`.
pub fn validation_losses<'t>(val_logits: Var<'t>, val_labels: &[usize]) -> Result<Var<'t>> {
    val_logits.cross_entropy(val_labels)
}

/// `a = sigmoid((X * Z * u) r)`, ablated factors replaced by ones.
pub fn example_weights<'t>(x: Var<'t>, z: Var<'t>, u: Var<'t>, r: Var<'t>, ablation: Ablation) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape.len() != 2 || z.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "example_weights",
            detail: format!("X {shape:?} vs Z {:?}", z.shape()),
        });
    }
    let (b_tr, b_val) = (shape[0], shape[1]);
    if u.shape() != [b_val] || r.shape() != [b_val] {
        return Err(Error::ShapeMismatch {
            op: "example_weights",
            detail: format!("u {:?} and r {:?} for {b_val} validation slots", u.shape(), r.shape()),
        });
    }
    let tape = x.tape();
    let ones = || tape.constant(Array::full(&shape, 1.0));
    let x = if ablation.no_x { ones() } else { x };
    let z = if ablation.no_z { ones() } else { z };
    let u = if ablation.no_u { ones() } else { u.reshape(&[1, b_val])?.broadcast_axis(0, b_tr)? };
    x.mul(z)?.mul(u)?.matmul(r.reshape(&[b_val, 1])?)?.reshape(&[b_tr])?.sigmoid()
}

/// Summary statistics of `a` (population variance).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct WeightStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl WeightStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return WeightStats::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        WeightStats { mean, variance, min, max }
    }
}

/// Snapshot of one reweighting pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ReweightBundle {
    pub x: Array,
    pub z: Array,
    pub u: Array,
    pub r: Array,
    pub a: Array,
}

impl ReweightBundle {
    pub fn stats(&self) -> WeightStats {
        WeightStats::of(self.a.data())
    }
}

/// The reweighting graph on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ReweightVars<'t> {
    pub x: Var<'t>,
    pub z: Var<'t>,
    pub u: Var<'t>,
    pub r: Var<'t>,
    pub a: Var<'t>,
}

impl ReweightVars<'_> {
    pub fn to_bundle(&self) -> ReweightBundle {
        ReweightBundle {
            x: self.x.to_array(),
            z: self.z.to_array(),
            u: self.u.to_array(),
            r: self.r.to_array(),
            a: self.a.to_array(),
        }
    }
}

/// Inputs to [`reweight`] that live on the tape.
#[derive(Clone, Copy, Debug)]
pub struct ReweightInputs<'a, 't> {
    pub train_emb: Var<'t>,
    pub val_emb: Var<'t>,
    pub train_labels: &'a [usize],
    pub val_labels: &'a [usize],
    pub classes: usize,
    /// Validation losses `(B_val)`.
    pub u: Var<'t>,
    pub r: Var<'t>,
}

/// Builds `X`, `Z` and `a` from embeddings, labels and validation losses.
pub fn reweight<'t>(inputs: ReweightInputs<'_, 't>, cfg: &ReweightConfig) -> Result<ReweightVars<'t>> {
    let tape = inputs.train_emb.tape();
    let x = visual_similarity(inputs.train_emb, inputs.val_emb, cfg.metric)?;
    let z = tape.constant(label_similarity(inputs.train_labels, inputs.val_labels, inputs.classes)?);
    let a = example_weights(x, z, inputs.u, inputs.r, cfg.ablation)?;
    Ok(ReweightVars { x, z, u: inputs.u, r: inputs.r, a })
}

/// Weighted per-example loss, mean over the batch or the plain sum.
pub fn weighted_loss<'t>(a: Var<'t>, losses: Var<'t>, sum: bool) -> Result<Var<'t>> {
    let total = a.mul(losses)?.sum()?;
    if sum {
        Ok(total)
    } else {
        let n = losses.numel() as f64;
        total.scale(1.0 / n)
    }
}

/// Distinct labels in a slice, ascending.
pub fn distinct_labels(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}
