use crate::error::Result;
use crate::models::{init_encoder, init_learner, Role};
use crate::params::ParamSet;
use crate::rng::derive_seed;
use crate::search_space::ArchitectureParams;
use crate::tensor::Array;

use super::config::SearchConfig;
use super::Networks;

/// Momentum buffers for the outer variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    pub arch: Array,
    pub v: ParamSet,
    pub r: Array,
}

/// Everything the search updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub arch: ArchitectureParams,
    pub w1: ParamSet,
    pub w2: ParamSet,
    pub v: ParamSet,
    pub r: Array,
    pub step: u64,
    pub velocity: Option<Velocity>,
}

impl SearchState {
    /// Small random logits, independent W1/W2 draws, zero `r`.
    pub fn init(nets: &Networks, cfg: &SearchConfig) -> Result<Self> {
        let learner = &nets.learner;
        let arch = ArchitectureParams::random(&learner.cell, &learner.op_set, derive_seed(cfg.seed, 10));
        Ok(SearchState {
            arch,
            w1: init_learner(learner, Role::W1, cfg.seed)?,
            w2: init_learner(learner, Role::W2, cfg.seed)?,
            v: init_encoder(&nets.encoder, cfg.seed)?,
            r: Array::zeros(&[cfg.batch_val]),
            step: 0,
            velocity: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.arch.logits().is_finite()
            && self.w1.is_finite()
            && self.w2.is_finite()
            && self.v.is_finite()
            && self.r.is_finite()
    }

    /// Same values, ignoring the step counter and momentum buffers.
    pub fn same_variables(&self, other: &SearchState) -> bool {
        let bits = |a: &Array| a.data().iter().map(|v| v.to_bits()).collect::<alloc::vec::Vec<_>>();
        let set_bits = |p: &ParamSet| bits(&p.flatten());
        bits(self.arch.logits()) == bits(other.arch.logits())
            && set_bits(&self.w1) == set_bits(&other.w1)
            && set_bits(&self.w2) == set_bits(&other.w2)
            && set_bits(&self.v) == set_bits(&other.v)
            && bits(&self.r) == bits(&other.r)
            && self.w1.signature() == other.w1.signature()
    }
}
