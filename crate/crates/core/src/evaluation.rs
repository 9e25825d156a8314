//! Architecture evaluation: a discretized cell is trained from a fresh
//! initialization with uniform example weights and scored on held-out data.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::models::{init_learner, learner_forward, LearnerConfig, Role};
use crate::params::ParamSet;
use crate::rng::{derive_seed, seeded};
use crate::search_space::{DiscreteArchitecture, Mixing};
use crate::tensor::Tape;
use crate::trilevel::{error_rate_of, BatchSampler};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Cosine decay of `lr` to zero over the run.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { epochs: 10, lr: 0.05, momentum: 0.9, batch: 32, cosine_decay: true, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("evaluation lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("evaluation momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("evaluation batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// One epoch of evaluation training.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalEpoch {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub test_error: f64,
    pub epochs: Vec<EvalEpoch>,
    pub weights: ParamSet,
}

fn full_batch(ds: &Dataset) -> Result<Batch> {
    ds.batch(&(0..ds.len()).collect::<Vec<_>>())
}

/// Misclassification rate of a fixed discrete network.
pub fn discrete_error(learner: &LearnerConfig, arch: &DiscreteArchitecture, w: &ParamSet, data: &Dataset) -> Result<f64> {
    let batch = full_batch(data)?;
    let tape = Tape::new();
    let logits = learner_forward(learner, Mixing::Discrete(arch), &w.bind(&tape, false), tape.constant(batch.x.clone()))?;
    Ok(error_rate_of(&logits.value(), &batch.labels))
}

/// Trains `arch` from scratch on `train` and reports the error on `test`
/// after every epoch.
pub fn train_discrete(
    learner: &LearnerConfig,
    arch: &DiscreteArchitecture,
    train: &Dataset,
    test: &Dataset,
    cfg: &EvalConfig,
    mut on_epoch: impl FnMut(&EvalEpoch),
) -> Result<EvalOutcome> {
    cfg.validate()?;
    arch.validate(&learner.cell)?;
    if arch.op_set != learner.op_set {
        return Err(Error::InvalidConfig("architecture and learner use different operation sets".into()));
    }
    let mut w = init_learner(learner, Role::W1, derive_seed(cfg.seed, 30))?;
    let mut velocity = w.zeros_like();
    let mut sampler = BatchSampler::new(train.len(), cfg.batch.min(train.len()), derive_seed(cfg.seed, 31))?;
    let steps = sampler.batches_per_pass();
    let total = (steps * cfg.epochs) as f64;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut test_error = discrete_error(learner, arch, &w, test)?;
    let mut t = 0usize;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            let batch = train.batch(&sampler.next_indices())?;
            let tape = Tape::new();
            let wb = w.bind(&tape, true);
            let logits = learner_forward(learner, Mixing::Discrete(arch), &wb, tape.constant(batch.x))?;
            let loss = logits.cross_entropy(&batch.labels)?.mean()?;
            let grads = w.with_values(tape.gradients(loss, wb.vars())?)?;
            loss_sum += loss.item();
            let lr = if cfg.cosine_decay {
                0.5 * cfg.lr * (1.0 + libm::cos(core::f64::consts::PI * t as f64 / total))
            } else {
                cfg.lr
            };
            velocity = velocity.scaled(cfg.momentum);
            velocity.axpy(1.0, &grads)?;
            w.axpy(-lr, &velocity)?;
            t += 1;
        }
        if !w.is_finite() {
            return Err(Error::Diverged { step: t as u64, detail: "evaluation weights became non-finite".into() });
        }
        test_error = discrete_error(learner, arch, &w, test)?;
        let e = EvalEpoch { epoch: epoch + 1, train_loss: loss_sum / steps as f64, test_error };
        on_epoch(&e);
        epochs.push(e);
    }
    Ok(EvalOutcome { test_error, epochs, weights: w })
}

/// Final evaluation: fresh weights trained on `train ∪ val`, scored on `test`.
pub fn evaluate_architecture(
    learner: &LearnerConfig,
    arch: &DiscreteArchitecture,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &EvalConfig,
    on_epoch: impl FnMut(&EvalEpoch),
) -> Result<EvalOutcome> {
    train_discrete(learner, arch, &train.concat(val)?, test, cfg, on_epoch)
}

/// Uniform draw of `k` distinct operations per edge.
pub fn sample_architecture(learner: &LearnerConfig, k: usize, seed: u64) -> Result<DiscreteArchitecture> {
    let ops = learner.op_set.len();
    if k == 0 || k > ops {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={ops}")));
    }
    let mut rng = seeded(seed);
    let edges = learner
        .cell
        .edges()
        .into_iter()
        .map(|edge| {
            let mut chosen = rand::seq::index::sample(&mut rng, ops, k).into_vec();
            chosen.sort_unstable();
            (edge, chosen)
        })
        .collect();
    Ok(DiscreteArchitecture { op_set: learner.op_set.clone(), edges })
}

/// One scored random-search candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub architecture: DiscreteArchitecture,
    pub val_error: f64,
}

/// Samples `candidates` architectures, trains each briefly on `train`,
/// scores it on `val` and keeps the best (first on ties).
pub fn random_search(
    learner: &LearnerConfig,
    k: usize,
    candidates: usize,
    train: &Dataset,
    val: &Dataset,
    brief: &EvalConfig,
    seed: u64,
) -> Result<(DiscreteArchitecture, Vec<Candidate>)> {
    if candidates == 0 {
        return Err(Error::InvalidConfig("random search needs at least one candidate".into()));
    }
    let mut scored = Vec::with_capacity(candidates);
    for i in 0..candidates {
        let architecture = sample_architecture(learner, k, derive_seed(seed, 40 + i as u64))?;
        let out = train_discrete(learner, &architecture, train, val, brief, |_| {})?;
        scored.push(Candidate { architecture, val_error: out.test_error });
    }
    let best = scored
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if c.val_error < scored[best].val_error { i } else { best });
    Ok((scored[best].architecture.clone(), scored))
}
