//! The tri-level search loop.
//!
//! One step:
//!
//! 1. `W1' = W1 - lr_w1 * grad_W1 L(A, W1, D_tr)`
//! 2. `a` from the encoder, labels and the validation losses of `W1'`;
//!    `W2' = W2 - lr_w2 * grad_W2 mean_i a_i l(A, W2, d_i)`
//! 3. `A`, `V` and `r` descend the validation loss of `W2'`. `V` and `r`
//!    only reach it through `a`, so their gradients come from one exact
//!    double-backward pass. `A` also reaches it through both unrolled steps;
//!    those Hessian-vector products are replaced by central differences.
//!
//! `W1 <- W1'` and `W2 <- W2'` carry over to the next step.

mod config;
mod darts;
mod oracle;
mod search;
mod stages;
mod state;

pub use config::{Order, SearchConfig};
pub use darts::{darts_direct_update, darts_step};
pub use oracle::{exact_hypergradient_oracle, OracleGradients};
pub use search::{
    lfm_step, run_search, BatchSampler, EpochMetrics, SearchMode, SearchOutcome, StepReport,
};
pub use stages::{
    direct_term, hypergradients, stage1_update, stage2_update, update_architecture, update_coefficients,
    update_encoder, weighted_step, DirectTerm, Hypergradients, Stage1, Stage2, Want,
};
pub use state::{SearchState, Velocity};

use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::Result;
use crate::models::{encoder_embed, learner_forward, EncoderConfig, LearnerConfig};
use crate::params::{BoundParams, ParamSet};
use crate::search_space::Mixing;
use crate::tensor::{Array, Tape, Var};

/// What the search needs from the learners and the encoder.
pub trait SearchModel {
    /// Per-example training losses `(B)` of a learner under architecture `arch`.
    fn losses<'t>(&self, arch: Var<'t>, w: &BoundParams<'_, 't>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>>;

    /// Embeddings `(B, K)`.
    fn embed<'t>(&self, v: &BoundParams<'_, 't>, x: Var<'t>) -> Result<Var<'t>>;

    fn classes(&self) -> usize;

    /// Fraction of misclassified examples, when the model classifies.
    fn error_rate(&self, _arch: &Array, _w: &ParamSet, _batch: &Batch) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// The learner and encoder configurations used by a search.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub learner: LearnerConfig,
    pub encoder: EncoderConfig,
}

impl SearchModel for Networks {
    fn losses<'t>(&self, arch: Var<'t>, w: &BoundParams<'_, 't>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        learner_forward(&self.learner, Mixing::Continuous(arch), w, x)?.cross_entropy(labels)
    }

    fn embed<'t>(&self, v: &BoundParams<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        encoder_embed(&self.encoder, v, x)
    }

    fn classes(&self) -> usize {
        self.learner.classes
    }

    fn error_rate(&self, arch: &Array, w: &ParamSet, batch: &Batch) -> Result<Option<f64>> {
        let tape = Tape::new();
        let a = tape.constant(arch.clone());
        let logits = learner_forward(&self.learner, Mixing::Continuous(a), &w.bind(&tape, false), tape.constant(batch.x.clone()))?;
        Ok(Some(error_rate_of(&logits.value(), &batch.labels)))
    }
}

/// Index of the largest entry of each row; ties go to the lower index.
pub fn argmax_rows(logits: &Array) -> Vec<usize> {
    let rows = logits.shape()[0];
    (0..rows)
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn error_rate_of(logits: &Array, labels: &[usize]) -> f64 {
    let wrong = argmax_rows(logits).iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len() as f64
}
