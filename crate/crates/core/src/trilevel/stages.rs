use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::Result;
use crate::params::{BoundParams, ParamSet};
use crate::reweight::{reweight, weighted_loss, ReweightBundle, ReweightInputs, ReweightVars};
use crate::search_space::ArchitectureParams;
use crate::tensor::{Array, Tape, Var};

use super::config::{Order, SearchConfig};
use super::state::SearchState;
use super::SearchModel;

pub(crate) fn ones(n: usize) -> Array {
    Array::full(&[n], 1.0)
}

/// `p - lr * g`; a zero rate returns `p` untouched.
pub(crate) fn descend(p: &ParamSet, g: &ParamSet, lr: f64) -> Result<ParamSet> {
    if lr == 0.0 {
        return Ok(p.clone());
    }
    p.plus_scaled(-lr, g)
}

pub(crate) fn descend_array(p: &Array, g: &Array, lr: f64) -> Result<Array> {
    let mut out = p.clone();
    if lr != 0.0 {
        out.axpy(-lr, g)?;
    }
    Ok(out)
}

/// Weighted batch loss with `weights` held on the tape.
pub(crate) fn weighted_objective<'t, M: SearchModel + ?Sized>(
    model: &M,
    arch: Var<'t>,
    w: &BoundParams<'_, 't>,
    batch: &Batch,
    weights: Var<'t>,
    sum: bool,
) -> Result<Var<'t>> {
    let x = arch.tape().constant(batch.x.clone());
    let losses = model.losses(arch, w, x, &batch.labels)?;
    weighted_loss(weights, losses, sum)
}

/// One descent step on `mean_i a_i l_i` (or the sum) with `a` fixed.
/// Returns the new weights and the loss before the step.
pub fn weighted_step<M: SearchModel + ?Sized>(
    model: &M,
    arch: &Array,
    w: &ParamSet,
    a: &Array,
    lr: f64,
    batch: &Batch,
    sum: bool,
) -> Result<(ParamSet, f64)> {
    let tape = Tape::new();
    let av = tape.constant(arch.clone());
    let wb = w.bind(&tape, true);
    let f = weighted_objective(model, av, &wb, batch, tape.constant(a.clone()), sum)?;
    let g = tape.gradients(f, wb.vars())?;
    Ok((descend(w, &w.with_values(g)?, lr)?, f.item()))
}

/// `grad_A` of the weighted loss at fixed learner weights.
pub(crate) fn arch_gradient<M: SearchModel + ?Sized>(
    model: &M,
    arch: &Array,
    w: &ParamSet,
    a: &Array,
    batch: &Batch,
    sum: bool,
) -> Result<Array> {
    let tape = Tape::new();
    let av = tape.leaf(arch.clone());
    let wb = w.bind(&tape, false);
    let f = weighted_objective(model, av, &wb, batch, tape.constant(a.clone()), sum)?;
    Ok(tape.gradients(f, &[av])?.remove(0))
}

/// `(grad_A F(w + eps d) - grad_A F(w - eps d)) / (2 eps)` with
/// `eps = eps_scale / |d|`. A zero direction yields `None`.
pub(crate) fn central_difference<M: SearchModel + ?Sized>(
    model: &M,
    arch: &Array,
    w: &ParamSet,
    dir: &ParamSet,
    a: &Array,
    batch: &Batch,
    sum: bool,
    eps_scale: f64,
    what: &str,
) -> Result<Option<Array>> {
    let norm = dir.norm();
    if norm == 0.0 {
        log::warn!("zero-norm finite-difference direction for {what}; term skipped");
        return Ok(None);
    }
    let eps = eps_scale / norm;
    let plus = arch_gradient(model, arch, &w.plus_scaled(eps, dir)?, a, batch, sum)?;
    let minus = arch_gradient(model, arch, &w.plus_scaled(-eps, dir)?, a, batch, sum)?;
    let mut diff = plus;
    diff.axpy(-1.0, &minus)?;
    Ok(Some(diff.scaled(1.0 / (2.0 * eps))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1 {
    pub w1_next: ParamSet,
    /// Training loss of `W1` before the step.
    pub loss: f64,
}

/// `W1' = W1 - lr_w1 * grad L(A, W1, D_tr)`.
pub fn stage1_update<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    train: &Batch,
) -> Result<Stage1> {
    let (w1_next, loss) =
        weighted_step(model, state.arch.logits(), &state.w1, &ones(train.len()), cfg.lr_w1, train, false)?;
    Ok(Stage1 { w1_next, loss })
}

/// `u`, `X`, `Z` and `a` for one pair of batches.
pub(crate) fn reweight_graph<'t, M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    arch_u: Var<'t>,
    w1: &BoundParams<'_, 't>,
    v: &BoundParams<'_, 't>,
    r: Var<'t>,
    train: &Batch,
    val: &Batch,
) -> Result<ReweightVars<'t>> {
    let tape = arch_u.tape();
    let xt = tape.constant(train.x.clone());
    let xv = tape.constant(val.x.clone());
    let u = model.losses(arch_u, w1, xv, &val.labels)?;
    reweight(
        ReweightInputs {
            train_emb: model.embed(v, xt)?,
            val_emb: model.embed(v, xv)?,
            train_labels: &train.labels,
            val_labels: &val.labels,
            classes: model.classes(),
            u,
            r,
        },
        &cfg.reweight,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2 {
    pub w2_next: ParamSet,
    pub bundle: ReweightBundle,
    /// Weighted training loss of `W2` before the step.
    pub weighted_loss: f64,
}

/// Example weights from `W1'`, then `W2' = W2 - lr_w2 * grad mean_i a_i l_i`.
pub fn stage2_update<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    train: &Batch,
    val: &Batch,
) -> Result<Stage2> {
    let tape = Tape::new();
    let bundle = reweight_graph(
        model,
        cfg,
        tape.constant(state.arch.logits().clone()),
        &w1_next.bind(&tape, false),
        &state.v.bind(&tape, false),
        tape.constant(state.r.clone()),
        train,
        val,
    )?
    .to_bundle();
    let (w2_next, weighted_loss) =
        weighted_step(model, state.arch.logits(), &state.w2, &bundle.a, cfg.lr_w2, train, cfg.weighted_sum)?;
    Ok(Stage2 { w2_next, bundle, weighted_loss })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectTerm {
    /// `dL_val / dA` at fixed `W2'`.
    pub grad_arch: Array,
    /// `dL_val / dW2'`.
    pub grad_w2: ParamSet,
    pub loss: f64,
}

/// Validation loss of `w2_next` and its partial gradients.
pub fn direct_term<M: SearchModel + ?Sized>(
    model: &M,
    arch: &Array,
    w2_next: &ParamSet,
    val: &Batch,
) -> Result<DirectTerm> {
    let tape = Tape::new();
    let av = tape.leaf(arch.clone());
    let wb = w2_next.bind(&tape, true);
    let f = weighted_objective(model, av, &wb, val, tape.constant(ones(val.len())), false)?;
    let mut wrt = Vec::with_capacity(1 + wb.vars().len());
    wrt.push(av);
    wrt.extend_from_slice(wb.vars());
    let mut g = tape.gradients(f, &wrt)?;
    let grad_arch = g.remove(0);
    Ok(DirectTerm { grad_arch, grad_w2: w2_next.with_values(g)?, loss: f.item() })
}

/// Which outer gradients to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want {
    pub arch: bool,
    pub encoder: bool,
    pub coefficients: bool,
}

impl Want {
    pub const ALL: Want = Want { arch: true, encoder: true, coefficients: true };

    /// Skips targets whose learning rate is zero.
    pub fn from_rates(cfg: &SearchConfig) -> Want {
        Want { arch: cfg.lr_a != 0.0, encoder: cfg.lr_v != 0.0, coefficients: cfg.lr_r != 0.0 }
    }
}

#[derive(Default)]
struct Coupling {
    encoder: Option<ParamSet>,
    coefficients: Option<Array>,
    /// `d s / d W1'`
    w1: Option<ParamSet>,
    /// `d s / d A` through the validation losses `u`.
    arch_u: Option<Array>,
}

/// Gradients of `s = <grad_W2 F(A, W2; a), g_val>` where `F` is the
/// weighted Stage-II loss. `a` is rebuilt on the tape so that `s` can be
/// differentiated through it.
#[allow(clippy::too_many_arguments)]
fn coupling<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    g_val: &ParamSet,
    train: &Batch,
    val: &Batch,
    want: [bool; 4],
) -> Result<Coupling> {
    let [want_v, want_r, want_w1, want_au] = want;
    let tape = Tape::new();
    let arch = state.arch.logits();
    let arch_u = if want_au { tape.leaf(arch.clone()) } else { tape.constant(arch.clone()) };
    let w1b = w1_next.bind(&tape, want_w1);
    let vb = state.v.bind(&tape, want_v);
    let r = if want_r { tape.leaf(state.r.clone()) } else { tape.constant(state.r.clone()) };
    let rw = reweight_graph(model, cfg, arch_u, &w1b, &vb, r, train, val)?;

    let w2b = state.w2.bind(&tape, true);
    let f = weighted_objective(model, tape.constant(arch.clone()), &w2b, train, rw.a, cfg.weighted_sum)?;
    let gw2 = tape.grad(f, w2b.vars(), true)?;
    let mut s: Option<Var<'_>> = None;
    for (g, target) in gw2.iter().zip(g_val.values()) {
        let term = g.dot(tape.constant(target.clone()))?;
        s = Some(match s {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let s = s.expect("learner has parameters");

    let mut wrt = Vec::new();
    if want_v {
        wrt.extend_from_slice(vb.vars());
    }
    if want_r {
        wrt.push(r);
    }
    if want_w1 {
        wrt.extend_from_slice(w1b.vars());
    }
    if want_au {
        wrt.push(arch_u);
    }
    let mut grads = tape.gradients(s, &wrt)?.into_iter();
    let mut out = Coupling::default();
    if want_v {
        out.encoder = Some(state.v.with_values(grads.by_ref().take(state.v.len()).collect())?);
    }
    if want_r {
        out.coefficients = grads.next();
    }
    if want_w1 {
        out.w1 = Some(w1_next.with_values(grads.by_ref().take(w1_next.len()).collect())?);
    }
    if want_au {
        out.arch_u = grads.next();
    }
    Ok(out)
}

/// Outer gradients of `L(A, W2'(W1'(A), V, r), D_val)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergradients {
    pub arch: Array,
    pub encoder: ParamSet,
    pub coefficients: Array,
    /// The `A` gradient at fixed `W2'`.
    pub direct: Array,
    /// Validation loss of `W2'`.
    pub val_loss: f64,
}

/// Stage-III gradients for `A`, `V` and `r`.
///
/// `V` and `r`: `-lr_w2 * d/d(V, r) <grad_W2 F, g_val>`, exact.
///
/// `A`, second order:
/// `direct - lr_w2 * (-lr_w1 * FD1 + FD2 + U)` where `FD2` probes `W2` along
/// `g_val`, `FD1` probes `W1` along `h = d s / d W1'`, and `U` is the exact
/// gradient through the validation losses `u` (disabled by `u_path`).
/// First order keeps only `direct`.
#[allow(clippy::too_many_arguments)]
pub fn hypergradients<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    w2_next: &ParamSet,
    a: &Array,
    train: &Batch,
    val: &Batch,
    want: Want,
) -> Result<Hypergradients> {
    let arch = state.arch.logits();
    let direct = direct_term(model, arch, w2_next, val)?;
    let second = cfg.order == Order::Second && want.arch;
    let live = cfg.lr_w2 != 0.0;
    let u_live = !cfg.reweight.ablation.no_u;
    let want_w1 = second && live && u_live && cfg.lr_w1 != 0.0;
    let want_au = second && live && u_live && cfg.u_path;
    let flags = [want.encoder && live, want.coefficients && live, want_w1, want_au];
    let c = if flags.iter().any(|&f| f) {
        coupling(model, cfg, state, w1_next, &direct.grad_w2, train, val, flags)?
    } else {
        Coupling::default()
    };

    let encoder = match c.encoder {
        Some(g) => g.scaled(-cfg.lr_w2),
        None => state.v.zeros_like(),
    };
    let coefficients = match c.coefficients {
        Some(g) => g.scaled(-cfg.lr_w2),
        None => state.r.zeros_like(),
    };

    let mut grad_arch = direct.grad_arch.clone();
    if second && live {
        let mut inner = arch.zeros_like();
        let fd2 = central_difference(
            model,
            arch,
            &state.w2,
            &direct.grad_w2,
            a,
            train,
            cfg.weighted_sum,
            cfg.eps_scale,
            "W2",
        )?;
        if let Some(fd2) = fd2 {
            inner.axpy(1.0, &fd2)?;
        }
        if let Some(h) = &c.w1 {
            let fd1 = central_difference(model, arch, &state.w1, h, &ones(train.len()), train, false, cfg.eps_scale, "W1")?;
            if let Some(fd1) = fd1 {
                inner.axpy(-cfg.lr_w1, &fd1)?;
            }
        }
        if let Some(u) = &c.arch_u {
            inner.axpy(1.0, u)?;
        }
        grad_arch.axpy(-cfg.lr_w2, &inner)?;
    }

    Ok(Hypergradients { arch: grad_arch, encoder, coefficients, direct: direct.grad_arch, val_loss: direct.loss })
}

/// `V' = V - lr_v * dL_val/dV`.
#[allow(clippy::too_many_arguments)]
pub fn update_encoder<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    w2_next: &ParamSet,
    a: &Array,
    train: &Batch,
    val: &Batch,
) -> Result<ParamSet> {
    let want = Want { arch: false, encoder: true, coefficients: false };
    let h = hypergradients(model, cfg, state, w1_next, w2_next, a, train, val, want)?;
    descend(&state.v, &h.encoder, cfg.lr_v)
}

/// `r' = r - lr_r * dL_val/dr`.
#[allow(clippy::too_many_arguments)]
pub fn update_coefficients<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    w2_next: &ParamSet,
    a: &Array,
    train: &Batch,
    val: &Batch,
) -> Result<Array> {
    let want = Want { arch: false, encoder: false, coefficients: true };
    let h = hypergradients(model, cfg, state, w1_next, w2_next, a, train, val, want)?;
    descend_array(&state.r, &h.coefficients, cfg.lr_r)
}

/// `A' = A - lr_a * dL_val/dA`.
#[allow(clippy::too_many_arguments)]
pub fn update_architecture<M: SearchModel + ?Sized>(
    model: &M,
    cfg: &SearchConfig,
    state: &SearchState,
    w1_next: &ParamSet,
    w2_next: &ParamSet,
    a: &Array,
    train: &Batch,
    val: &Batch,
) -> Result<ArchitectureParams> {
    let want = Want { arch: true, encoder: false, coefficients: false };
    let h = hypergradients(model, cfg, state, w1_next, w2_next, a, train, val, want)?;
    ArchitectureParams::from_logits(descend_array(state.arch.logits(), &h.arch, cfg.lr_a)?)
}
