use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::reweight::WeightStats;
use crate::rng::{derive_seed, seeded, Rng};
use crate::search_space::{derive_architecture, ArchitectureParams, DiscreteArchitecture};
use crate::tensor::Array;

use super::config::SearchConfig;
use super::darts::darts_step;
use super::stages::{hypergradients, stage1_update, stage2_update, Want};
use super::state::{SearchState, Velocity};
use super::{Networks, SearchModel};

/// Diagnostics of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Training loss of `W1` before its update.
    pub w1_train_loss: f64,
    /// Weighted Stage-II loss of `W2` before its update.
    pub w2_weighted_loss: Option<f64>,
    /// Validation-batch loss of the weights the architecture step looked at.
    pub val_loss: f64,
    /// The example weights `a`.
    pub weights: Option<Vec<f64>>,
}

impl StepReport {
    pub fn a_stats(&self) -> Option<WeightStats> {
        self.weights.as_deref().map(WeightStats::of)
    }
}

/// Descent on `A` and optionally `V`, `r`, with heavy-ball momentum when
/// configured.
pub(crate) fn apply_outer(
    state: &mut SearchState,
    cfg: &SearchConfig,
    grad_arch: &Array,
    grad_v: Option<&ParamSet>,
    grad_r: Option<&Array>,
) -> Result<()> {
    let mu = cfg.momentum;
    if mu > 0.0 && state.velocity.is_none() {
        state.velocity = Some(Velocity {
            arch: state.arch.logits().zeros_like(),
            v: state.v.zeros_like(),
            r: state.r.zeros_like(),
        });
    }
    let vel = state.velocity.as_mut().filter(|_| mu > 0.0);
    let (ga, gv, gr) = match vel {
        Some(vel) => {
            vel.arch = vel.arch.scaled(mu);
            vel.arch.axpy(1.0, grad_arch)?;
            if let Some(g) = grad_v {
                vel.v = vel.v.scaled(mu);
                vel.v.axpy(1.0, g)?;
            }
            if let Some(g) = grad_r {
                vel.r = vel.r.scaled(mu);
                vel.r.axpy(1.0, g)?;
            }
            (vel.arch.clone(), grad_v.map(|_| vel.v.clone()), grad_r.map(|_| vel.r.clone()))
        }
        None => (grad_arch.clone(), grad_v.cloned(), grad_r.cloned()),
    };
    if cfg.lr_a != 0.0 {
        let mut logits = state.arch.logits().clone();
        logits.axpy(-cfg.lr_a, &ga)?;
        state.arch = ArchitectureParams::from_logits(logits)?;
    }
    if let Some(g) = gv {
        if cfg.lr_v != 0.0 {
            state.v.axpy(-cfg.lr_v, &g)?;
        }
    }
    if let Some(g) = gr {
        if cfg.lr_r != 0.0 {
            state.r.axpy(-cfg.lr_r, &g)?;
        }
    }
    Ok(())
}

/// One LFM step: Stage I, Stage II, then `A`, `V` and `r` from the same
/// pre-step state. `W1 <- W1'`, `W2 <- W2'`.
pub fn lfm_step<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &mut SearchState,
    train: &Batch,
    val: &Batch,
) -> Result<StepReport> {
    let s1 = stage1_update(model, cfg, state, train)?;
    let s2 = stage2_update(model, cfg, state, &s1.w1_next, train, val)?;
    let h = hypergradients(
        model,
        cfg,
        state,
        &s1.w1_next,
        &s2.w2_next,
        &s2.bundle.a,
        train,
        val,
        Want::from_rates(cfg),
    )?;
    apply_outer(state, cfg, &h.arch, Some(&h.encoder), Some(&h.coefficients))?;
    state.w1 = s1.w1_next;
    state.w2 = s2.w2_next;
    state.step += 1;
    Ok(StepReport {
        w1_train_loss: s1.loss,
        w2_weighted_loss: Some(s2.weighted_loss),
        val_loss: h.val_loss,
        weights: Some(s2.bundle.a.into_data()),
    })
}

/// Endless shuffled batches without replacement; a fresh permutation
/// starts whenever fewer than `batch` unseen examples remain.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || n < batch {
            return Err(Error::InvalidConfig(format!("cannot draw batches of {batch} from {n} examples")));
        }
        let mut s = BatchSampler { order: (0..n).collect(), batch, cursor: 0, rng: seeded(seed) };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    /// Full batches per permutation.
    pub fn batches_per_pass(&self) -> usize {
        self.order.len() / self.batch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    Lfm,
    /// Unweighted DARTS on one weight set.
    Darts,
    /// DARTS for the first half of the epochs, then LFM with both learners
    /// sharing one weight set.
    SingleSet,
}

impl SearchMode {
    pub fn name(self) -> &'static str {
        match self {
            SearchMode::Lfm => "lfm",
            SearchMode::Darts => "darts-baseline",
            SearchMode::SingleSet => "single-set-baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub w1_train_loss: f64,
    pub w2_weighted_loss: Option<f64>,
    /// Mean validation-batch loss seen by the architecture updates.
    pub w2_val_loss: f64,
    /// Error of the evaluated weights on the whole validation split.
    pub val_error: Option<f64>,
    pub a_stats: Option<WeightStats>,
    pub arch_entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub architecture: DiscreteArchitecture,
    pub state: SearchState,
    pub metrics: Vec<EpochMetrics>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Runs the search and discretizes the final architecture.
pub fn run_search(
    nets: &Networks,
    cfg: &SearchConfig,
    mode: SearchMode,
    train: &Dataset,
    val: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<SearchOutcome> {
    cfg.validate()?;
    nets.learner.validate()?;
    if train.classes != nets.learner.classes || val.classes != nets.learner.classes {
        return Err(Error::InvalidConfig(format!(
            "datasets have {}/{} classes, learner expects {}",
            train.classes, val.classes, nets.learner.classes
        )));
    }
    let mut state = SearchState::init(nets, cfg)?;
    let mut train_sampler = BatchSampler::new(train.len(), cfg.batch_train, derive_seed(cfg.seed, 20))?;
    let mut val_sampler = BatchSampler::new(val.len(), cfg.batch_val, derive_seed(cfg.seed, 21))?;
    let steps_per_epoch = train_sampler.batches_per_pass();
    let total = (steps_per_epoch * cfg.epochs) as u64;
    let full_val = val.batch(&(0..val.len()).collect::<Vec<_>>())?;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut reports = Vec::with_capacity(steps_per_epoch);
        for _ in 0..steps_per_epoch {
            let tb = train.batch(&train_sampler.next_indices())?;
            let vb = val.batch(&val_sampler.next_indices())?;
            let step_cfg = cfg.at_step(state.step, total);
            let step = state.step;
            let darts_phase = mode == SearchMode::Darts || (mode == SearchMode::SingleSet && epoch < cfg.epochs / 2);
            let result = if darts_phase {
                darts_step(nets, &step_cfg, &mut state, &tb, &vb)
            } else if mode == SearchMode::SingleSet {
                state.w2 = state.w1.clone();
                let r = lfm_step(nets, &step_cfg, &mut state, &tb, &vb);
                state.w1 = state.w2.clone();
                r
            } else {
                lfm_step(nets, &step_cfg, &mut state, &tb, &vb)
            };
            let report = match result {
                Ok(r) => r,
                Err(Error::NonFinite { op, node }) => {
                    return Err(Error::Diverged { step, detail: format!("non-finite value in {op} (node {node})") })
                }
                Err(e) => return Err(e),
            };
            if !state.is_finite() {
                return Err(Error::Diverged { step, detail: "non-finite search state".into() });
            }
            reports.push(report);
        }

        let evaluated = if mode == SearchMode::Lfm { &state.w2 } else { &state.w1 };
        let weights: Vec<f64> = reports.iter().filter_map(|r| r.weights.as_deref()).flatten().copied().collect();
        let w2_losses: Vec<f64> = reports.iter().filter_map(|r| r.w2_weighted_loss).collect();
        let m = EpochMetrics {
            epoch: epoch + 1,
            w1_train_loss: mean(&reports.iter().map(|r| r.w1_train_loss).collect::<Vec<_>>()),
            w2_weighted_loss: (!w2_losses.is_empty()).then(|| mean(&w2_losses)),
            w2_val_loss: mean(&reports.iter().map(|r| r.val_loss).collect::<Vec<_>>()),
            val_error: nets.error_rate(state.arch.logits(), evaluated, &full_val)?,
            a_stats: (!weights.is_empty()).then(|| WeightStats::of(&weights)),
            arch_entropy: state.arch.entropy(),
        };
        on_epoch(&m);
        metrics.push(m);
    }

    let architecture = derive_architecture(&state.arch, &nets.learner.cell, &nets.learner.op_set, cfg.k)?;
    Ok(SearchOutcome { architecture, state, metrics })
}
