//! One-step-unrolled DARTS on a single weight set with uniform example
//! weights. Used as the baseline search.

use crate::data::Batch;
use crate::error::Result;
use crate::params::ParamSet;
use crate::tensor::Array;

use super::config::{Order, SearchConfig};
use super::search::{apply_outer, StepReport};
use super::stages::{central_difference, descend_array, direct_term, ones, weighted_step};
use super::state::SearchState;
use super::SearchModel;

/// `W' = W - lr_w * grad mean_i(c * l_i)` then `A' = A - lr_a * dL_val(A, W')/dA`
/// with `W'` held fixed. Returns `A'`.
#[allow(clippy::too_many_arguments)]
pub fn darts_direct_update<M: SearchModel + ?Sized>(
    model: &M,
    arch: &Array,
    w: &ParamSet,
    lr_w: f64,
    lr_a: f64,
    uniform_weight: f64,
    train: &Batch,
    val: &Batch,
) -> Result<Array> {
    let c = Array::full(&[train.len()], uniform_weight);
    let (w_next, _) = weighted_step(model, arch, w, &c, lr_w, train, false)?;
    let d = direct_term(model, arch, &w_next, val)?;
    descend_array(arch, &d.grad_arch, lr_a)
}

/// A DARTS step on `state.arch` and `state.w1`. Second order adds
/// `-lr_w1 * (grad_A L_tr(W+) - grad_A L_tr(W-)) / 2eps` with
/// `W± = W ± eps * grad_W' L_val`.
pub fn darts_step<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &mut SearchState,
    train: &Batch,
    val: &Batch,
) -> Result<StepReport> {
    let arch = state.arch.logits().clone();
    let uniform = ones(train.len());
    let (w_next, train_loss) = weighted_step(model, &arch, &state.w1, &uniform, cfg.lr_w1, train, false)?;
    let d = direct_term(model, &arch, &w_next, val)?;
    let mut grad = d.grad_arch;
    if cfg.order == Order::Second && cfg.lr_w1 != 0.0 && cfg.lr_a != 0.0 {
        let fd = central_difference(model, &arch, &state.w1, &d.grad_w2, &uniform, train, false, cfg.eps_scale, "W")?;
        if let Some(fd) = fd {
            grad.axpy(-cfg.lr_w1, &fd)?;
        }
    }
    apply_outer(state, cfg, &grad, None, None)?;
    state.w1 = w_next;
    state.step += 1;
    Ok(StepReport { w1_train_loss: train_loss, w2_weighted_loss: None, val_loss: d.loss, weights: None })
}
