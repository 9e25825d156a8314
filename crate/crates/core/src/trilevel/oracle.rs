use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::Result;
use crate::params::{BoundParams, ParamSet};
use crate::tensor::{Array, Tape, Var};

use super::config::SearchConfig;
use super::stages::{ones, reweight_graph, weighted_objective};
use super::state::SearchState;
use super::SearchModel;

/// Exact gradients of the one-step-unrolled validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleGradients {
    pub arch: Array,
    pub encoder: ParamSet,
    pub coefficients: Array,
    pub val_loss: f64,
}

fn sgd_on_tape<'p, 't>(w: &BoundParams<'p, 't>, grads: &[Var<'t>], lr: f64) -> Result<BoundParams<'p, 't>> {
    let next = w
        .vars()
        .iter()
        .zip(grads)
        .map(|(&p, &g)| p.sub(g.scale(lr)?))
        .collect::<Result<Vec<_>>>()?;
    BoundParams::from_vars(w.set(), next)
}

/// Differentiates `L(A, W2'(W1'(A), V, r), D_val)` on a single tape with
/// both unrolled steps materialized. Meant for small instances.
pub fn exact_hypergradient_oracle<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    train: &Batch,
    val: &Batch,
) -> Result<OracleGradients> {
    let tape = Tape::new();
    let arch = tape.leaf(state.arch.logits().clone());
    let vb = state.v.bind(&tape, true);
    let r = tape.leaf(state.r.clone());

    let w1 = state.w1.bind(&tape, true);
    let f1 = weighted_objective(model, arch, &w1, train, tape.constant(ones(train.len())), false)?;
    let g1 = tape.grad(f1, w1.vars(), true)?;
    let w1_next = sgd_on_tape(&w1, &g1, cfg.lr_w1)?;

    let a = reweight_graph(model, cfg, arch, &w1_next, &vb, r, train, val)?.a;

    let w2 = state.w2.bind(&tape, true);
    let f2 = weighted_objective(model, arch, &w2, train, a, cfg.weighted_sum)?;
    let g2 = tape.grad(f2, w2.vars(), true)?;
    let w2_next = sgd_on_tape(&w2, &g2, cfg.lr_w2)?;

    let loss = weighted_objective(model, arch, &w2_next, val, tape.constant(ones(val.len())), false)?;
    let mut wrt = Vec::with_capacity(2 + vb.vars().len());
    wrt.push(arch);
    wrt.extend_from_slice(vb.vars());
    wrt.push(r);
    let mut g = tape.gradients(loss, &wrt)?;
    let coefficients = g.pop().expect("r gradient");
    let arch_grad = g.remove(0);
    Ok(OracleGradients {
        arch: arch_grad,
        encoder: state.v.with_values(g)?,
        coefficients,
        val_loss: loss.item(),
    })
}
