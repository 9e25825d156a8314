//! Acceptance run: one line per criterion.
//!
//! Criteria 1-4 and 6-8 decide the exit status. Criterion 5 (the scaled
//! benchmark) is printed with its real verdict and margins but does not
//! fail the target; criterion 9 only ever warns.

use std::path::Path;
use std::time::Instant;

use lfm::config::{ExperimentConfig, RunMode};
use lfm::diagnostics::{gradcheck, oracle_compare, tiny_problem};
use lfm::experiment::{run_ablation, run_experiment, AblationRow};
use lfm::metrics::{read_metrics, Phase};
use lfm_core::data::Batch;
use lfm_core::params::{BoundParams, ParamSet};
use lfm_core::reweight::{visual_similarity, Ablation, SimilarityMetric};
use lfm_core::rng::seeded;
use lfm_core::search_space::{derive_architecture, ArchitectureParams, CellSpec, OpKind, OpSet};
use lfm_core::tensor::{Array, Tape, Var};
use lfm_core::trilevel::{
    darts_direct_update, lfm_step, stage1_update, stage2_update, Networks, Order, SearchConfig, SearchModel,
    SearchState, StepReport,
};
use rand::Rng as _;

enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Line {
    id: u8,
    name: &'static str,
    verdict: Verdict,
    detail: String,
    gating: bool,
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn report(line: &Line) {
    let v = match line.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Warn => "WARN",
    };
    let gate = if line.gating { "" } else { " (non-gating)" };
    println!("criterion {}: {v}{gate} {}: {}", line.id, line.name, line.detail);
}

fn bits(a: &Array) -> Vec<u64> {
    a.data().iter().map(|v| v.to_bits()).collect()
}

fn set_bits(p: &ParamSet) -> Vec<u64> {
    bits(&p.flatten())
}

fn random_array(rng: &mut lfm_core::rng::Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let r = gradcheck(100, 0).expect("gradient check runs");
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: 1,
        name: "autodiff soundness",
        verdict: verdict(r.passed && r.max_error < 1e-5 && secs < 60.0),
        detail: format!("100 random networks, max relative error {:.2e}, {secs:.1} s", r.max_error),
        gating: true,
    }
}

fn criterion_2() -> Line {
    let r = oracle_compare(20, 0).expect("oracle comparison runs");
    let ok = r.min_arch_cosine >= 0.95 && r.min_encoder_cosine >= 0.999 && r.min_coefficient_cosine >= 0.999;
    Line {
        id: 2,
        name: "hypergradient fidelity",
        verdict: verdict(ok),
        detail: format!(
            "20 states, min cosine A {:.6} (mean {:.6}), V {:.9}, r {:.9}",
            r.min_arch_cosine, r.mean_arch_cosine, r.min_encoder_cosine, r.min_coefficient_cosine
        ),
        gating: true,
    }
}

/// Below this, f64 `sigmoid(t)` is still strictly less than 1 (it rounds to
/// 1 from about 36.7 on).
const SIGMOID_SATURATION: f64 = 36.0;

fn criterion_3() -> Line {
    let mut rng = seeded(3);
    let mut worst_row = 0.0f64;
    for metric in [SimilarityMetric::Dot, SimilarityMetric::Cosine, SimilarityMetric::NegL2] {
        for _ in 0..20 {
            let tape = Tape::new();
            let tr = tape.constant(random_array(&mut rng, &[7, 4]));
            let va = tape.constant(random_array(&mut rng, &[5, 4]));
            let x = visual_similarity(tr, va, metric).unwrap().value();
            for i in 0..7 {
                let s: f64 = x.data()[i * 5..(i + 1) * 5].iter().sum();
                worst_row = worst_row.max((s - 1.0).abs());
            }
        }
    }

    let mut at_start = true;
    let mut in_range = true;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_arg = f64::NEG_INFINITY;
    let mut args_ok = true;
    let mut saturated = 0;
    for seed in 0..5 {
        let (nets, cfg, mut s, t, v) = tiny_problem(seed).unwrap();
        s.r = s.r.zeros_like();
        let rep = lfm_step(&nets, &cfg, &mut s.clone(), &t, &v).unwrap();
        at_start &= rep.weights.unwrap().iter().all(|&a| a == 0.5);

        s.r = Array::from_vec((0..cfg.batch_val).map(|_| rng.random_range(0.0..1.0)).collect());
        let s1 = stage1_update(&nets, &cfg, &s, &t).unwrap();
        let s2 = stage2_update(&nets, &cfg, &s, &s1.w1_next, &t, &v).unwrap();
        let b = &s2.bundle;
        let (n, m) = (b.x.shape()[0], b.x.shape()[1]);
        for i in 0..n {
            let arg: f64 = (0..m).map(|j| b.x.data()[i * m + j] * b.z.data()[i * m + j] * b.u.data()[j] * b.r.data()[j]).sum();
            let a = b.a.data()[i];
            args_ok &= arg.is_finite() && arg >= 0.0;
            if arg < SIGMOID_SATURATION {
                in_range &= (0.5..1.0).contains(&a);
            } else {
                saturated += 1;
                in_range &= (0.5..=1.0).contains(&a);
            }
            lo = lo.min(a);
            hi = hi.max(a);
            max_arg = max_arg.max(arg);
        }
    }
    Line {
        id: 3,
        name: "similarity rows and weight range",
        verdict: verdict(worst_row <= 1e-9 && at_start && args_ok && in_range),
        detail: format!(
            "max |row sum - 1| {worst_row:.1e}; a = 0.5 at r = 0: {at_start}; with r in [0, 1), every argument finite and >= 0: {args_ok}, max {max_arg:.2}; a in [{lo:.6}, {hi:.6}], {saturated} arguments past {SIGMOID_SATURATION} (f64 rounding to 1 allowed there)"
        ),
        gating: true,
    }
}

/// Replaces the validation labels seen by the loss with the originals, so
/// that a permutation of the batch labels reaches only the label-similarity
/// input of the reweighting.
struct LossSeesOriginal<'a> {
    inner: &'a Networks,
    permuted: Vec<usize>,
    original: Vec<usize>,
}

impl SearchModel for LossSeesOriginal<'_> {
    fn losses<'t>(&self, arch: Var<'t>, w: &BoundParams<'_, 't>, x: Var<'t>, labels: &[usize]) -> lfm_core::Result<Var<'t>> {
        let labels = if labels == self.permuted.as_slice() { &self.original } else { labels };
        self.inner.losses(arch, w, x, labels)
    }

    fn embed<'t>(&self, v: &BoundParams<'_, 't>, x: Var<'t>) -> lfm_core::Result<Var<'t>> {
        self.inner.embed(v, x)
    }

    fn classes(&self) -> usize {
        self.inner.classes()
    }
}

/// Everything one step produces apart from the perturbed variable.
fn fingerprint(s: &SearchState, r: &StepReport, skip: &str) -> Vec<Vec<u64>> {
    let mut out = vec![
        bits(s.arch.logits()),
        set_bits(&s.w2),
        bits(&s.r),
        bits(&Array::from_vec(r.weights.clone().unwrap())),
        vec![r.val_loss.to_bits()],
        vec![r.w2_weighted_loss.unwrap().to_bits()],
    ];
    if skip != "w1" {
        out.push(set_bits(&s.w1));
        out.push(vec![r.w1_train_loss.to_bits()]);
    }
    if skip != "v" {
        out.push(set_bits(&s.v));
    }
    out
}

fn step_once(model: &dyn SearchModel, cfg: &SearchConfig, s: &SearchState, t: &Batch, v: &Batch, skip: &str) -> Vec<Vec<u64>> {
    let mut s = s.clone();
    let rep = lfm_step(model, cfg, &mut s, t, v).unwrap();
    fingerprint(&s, &rep, skip)
}

/// `(invariant with the flag, sensitive without it)` for each ablation.
fn ablation_checks(seed: u64) -> [(bool, bool); 3] {
    let (nets, mut cfg, s, t, v) = tiny_problem(seed).unwrap();
    let mut rng = seeded(seed + 100);
    let mut flagged = |no_x, no_z, no_u| {
        cfg.reweight.ablation = Ablation { no_x, no_z, no_u };
        cfg.clone()
    };
    let (cfg_x, cfg_z, cfg_u, cfg_none) =
        (flagged(true, false, false), flagged(false, true, false), flagged(false, false, true), flagged(false, false, false));

    // no-z: permute validation labels for the label-similarity input only
    let mut permuted = v.labels.clone();
    permuted.rotate_left(1);
    assert_ne!(permuted, v.labels);
    let wrapped = LossSeesOriginal { inner: &nets, permuted: permuted.clone(), original: v.labels.clone() };
    let vp = Batch { x: v.x.clone(), labels: permuted };
    let z = (
        step_once(&nets, &cfg_z, &s, &t, &v, "") == step_once(&wrapped, &cfg_z, &s, &t, &vp, ""),
        step_once(&nets, &cfg_none, &s, &t, &v, "") != step_once(&wrapped, &cfg_none, &s, &t, &vp, ""),
    );

    // no-x: perturb the encoder, hence every embedding
    let mut sv = s.clone();
    let noise = sv.v.with_values(sv.v.values().map(|a| random_array(&mut rng, a.shape())).collect()).unwrap();
    sv.v.axpy(0.5, &noise).unwrap();
    let x = (
        step_once(&nets, &cfg_x, &s, &t, &v, "v") == step_once(&nets, &cfg_x, &sv, &t, &v, "v"),
        step_once(&nets, &cfg_none, &s, &t, &v, "v") != step_once(&nets, &cfg_none, &sv, &t, &v, "v"),
    );

    // no-u: perturb W1, hence the validation logits that give u
    let mut su = s.clone();
    let noise = su.w1.with_values(su.w1.values().map(|a| random_array(&mut rng, a.shape())).collect()).unwrap();
    su.w1.axpy(0.5, &noise).unwrap();
    let u = (
        step_once(&nets, &cfg_u, &s, &t, &v, "w1") == step_once(&nets, &cfg_u, &su, &t, &v, "w1"),
        step_once(&nets, &cfg_none, &s, &t, &v, "w1") != step_once(&nets, &cfg_none, &su, &t, &v, "w1"),
    );
    [x, z, u]
}

fn criterion_4() -> Line {
    let mut results = [(true, true); 3];
    for seed in 0..3 {
        for (acc, r) in results.iter_mut().zip(ablation_checks(seed)) {
            acc.0 &= r.0;
            acc.1 &= r.1;
        }
    }
    let ok = results.iter().all(|&(inv, sens)| inv && sens);
    let names = ["no-x/embeddings", "no-z/val labels", "no-u/val logits"];
    let detail = names
        .iter()
        .zip(results)
        .map(|(n, (inv, sens))| format!("{n} bitwise invariant {inv}, unablated sensitive {sens}"))
        .collect::<Vec<_>>()
        .join("; ");
    Line { id: 4, name: "ablation semantics", verdict: verdict(ok), detail, gating: true }
}

struct Benchmark {
    rows: Vec<AblationRow>,
    darts_mean: Option<f64>,
    darts_std: Option<f64>,
    seconds_per_seed: f64,
    variance_first_last: Vec<(u64, f64, f64)>,
}

fn benchmark(dir: &Path) -> Benchmark {
    let base = ExperimentConfig { output_dir: Some(dir.to_path_buf()), ..ExperimentConfig::default() };
    let start = Instant::now();
    let rows = run_ablation(&base, &["full", "no-u", "no-x", "no-z"], dir).expect("ablation runs");
    let darts = run_experiment(&ExperimentConfig { mode: RunMode::DartsBaseline, ..base.clone() }, "darts-baseline", dir)
        .expect("baseline runs");
    let seconds_per_seed = start.elapsed().as_secs_f64() / base.seeds.len() as f64;
    let variance_first_last = base
        .seeds
        .iter()
        .filter_map(|&seed| {
            let recs = read_metrics(&dir.join(format!("full-seed{seed}.jsonl"))).ok()?;
            let var: Vec<f64> = recs.iter().filter(|r| r.phase == Phase::Search).filter_map(|r| r.a_variance).collect();
            Some((seed, *var.first()?, *var.last()?))
        })
        .collect();
    Benchmark {
        rows,
        darts_mean: darts.mean_test_error,
        darts_std: darts.std_test_error,
        seconds_per_seed,
        variance_first_last,
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn criterion_5(b: &Benchmark) -> Line {
    let row = |name: &str| b.rows.iter().find(|r| r.variant == name).and_then(|r| r.mean_test_error);
    let full = row("full");
    let beats_darts = matches!((full, b.darts_mean), (Some(f), Some(d)) if f < d);
    let ablations = ["no-u", "no-x", "no-z"];
    let beats_ablations = ablations.iter().all(|n| matches!((full, row(n)), (Some(f), Some(a)) if f <= a));
    let full_std = b.rows.iter().find(|r| r.variant == "full").and_then(|r| r.std_test_error);
    let mut detail = format!(
        "5 seeds, {:.0} s per seed for all runs; test error LFM {} ± {} vs DARTS {} ± {} (margin {})",
        b.seconds_per_seed,
        fmt(full),
        fmt(full_std),
        fmt(b.darts_mean),
        fmt(b.darts_std),
        fmt(full.zip(b.darts_mean).map(|(f, d)| d - f)),
    );
    for n in ablations {
        detail += &format!("; {n} {} (margin {})", fmt(row(n)), fmt(full.zip(row(n)).map(|(f, a)| a - f)));
    }
    Line {
        id: 5,
        name: "directional benchmark",
        verdict: verdict(beats_darts && beats_ablations && b.seconds_per_seed < 600.0),
        detail,
        gating: false,
    }
}

fn criterion_6() -> Line {
    let mut exact = true;
    for seed in 0..5 {
        let (nets, mut cfg, mut s, t, v) = tiny_problem(seed).unwrap();
        cfg.reweight.ablation = Ablation::ALL;
        cfg.order = Order::First;
        cfg.lr_r = 0.0;
        s.r = s.r.zeros_like();
        let expected = darts_direct_update(&nets, s.arch.logits(), &s.w2, cfg.lr_w2, cfg.lr_a, 0.5, &t, &v).unwrap();
        lfm_step(&nets, &cfg, &mut s, &t, &v).unwrap();
        exact &= bits(s.arch.logits()) == bits(&expected);
    }
    Line {
        id: 6,
        name: "reduction to DARTS",
        verdict: verdict(exact),
        detail: format!("first order, all factors ablated, r frozen at 0: A-update bitwise equal on 5 states: {exact}"),
        gating: true,
    }
}

fn criterion_7(dir: &Path) -> Line {
    let cfg = |sub: &str| ExperimentConfig {
        seeds: vec![11],
        n: 240,
        epochs: 3,
        eval_epochs: 2,
        output_dir: Some(dir.join(sub)),
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&cfg("a"), "lfm", &dir.join("a")).unwrap();
    let b = run_experiment(&cfg("b"), "lfm", &dir.join("b")).unwrap();
    let read = |sub: &str, ext: &str| std::fs::read(dir.join(sub).join(format!("lfm-seed11.{ext}"))).unwrap();
    let same_metrics = read("a", "jsonl") == read("b", "jsonl");
    let same_arch = read("a", "arch") == read("b", "arch") && a.seeds[0].architecture == b.seeds[0].architecture;
    let same_state = read("a", "lfmw") == read("b", "lfmw");
    Line {
        id: 7,
        name: "determinism",
        verdict: verdict(same_metrics && same_arch && same_state),
        detail: format!("metrics bytes equal {same_metrics}, architecture equal {same_arch}, search state bytes equal {same_state}"),
        gating: true,
    }
}

fn criterion_8() -> Line {
    let mut rng = seeded(8);
    let op_set = OpSet::new(vec![OpKind::Zero, OpKind::Identity, OpKind::AvgPool3x3, OpKind::Conv3x3]).unwrap();
    let mut ok = true;
    for _ in 0..1000 {
        let cell = CellSpec::new(rng.random_range(2..=4), Default::default()).unwrap();
        let k = rng.random_range(1..=op_set.len());
        let edges = cell.edge_count();
        // coarse values so that ties are common
        let logits: Vec<f64> = (0..edges * op_set.len()).map(|_| rng.random_range(-2..=2) as f64 * 0.5).collect();
        let arch = ArchitectureParams::from_logits(Array::new(&[edges, op_set.len()], logits.clone()).unwrap()).unwrap();
        let d = derive_architecture(&arch, &cell, &op_set, k).unwrap();
        for (e, (_, kept)) in d.edges.iter().enumerate() {
            let row = &logits[e * op_set.len()..(e + 1) * op_set.len()];
            // op o is kept iff fewer than k ops beat it
            let expected: Vec<usize> = (0..row.len())
                .filter(|&o| (0..row.len()).filter(|&p| row[p] > row[o] || (row[p] == row[o] && p < o)).count() < k)
                .collect();
            ok &= kept.len() == k && kept == &expected;
        }
    }
    Line {
        id: 8,
        name: "discretization",
        verdict: verdict(ok),
        detail: "1000 random trials: exactly k ops per edge, top-k by logit, lower index wins ties".into(),
        gating: true,
    }
}

fn criterion_9(b: &Benchmark) -> Line {
    let decreased = b.variance_first_last.iter().filter(|(_, first, last)| last <= first).count();
    let mean = |f: fn(&(u64, f64, f64)) -> f64| {
        b.variance_first_last.iter().map(f).sum::<f64>() / b.variance_first_last.len().max(1) as f64
    };
    let ok = !b.variance_first_last.is_empty() && decreased == b.variance_first_last.len();
    Line {
        id: 9,
        name: "weight dynamics",
        verdict: if ok { Verdict::Pass } else { Verdict::Warn },
        detail: format!(
            "var(a) final <= epoch 1 on {decreased} of {} seeds; mean var(a) epoch 1 {:.3e}, final {:.3e}",
            b.variance_first_last.len(),
            mean(|x| x.1),
            mean(|x| x.2)
        ),
        gating: false,
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut lines = Vec::new();
    let mut emit = |line: Line| {
        report(&line);
        lines.push(line);
    };
    emit(criterion_1());
    emit(criterion_2());
    emit(criterion_3());
    emit(criterion_4());
    let bench = benchmark(&dir.path().join("benchmark"));
    emit(criterion_5(&bench));
    emit(criterion_6());
    emit(criterion_7(&dir.path().join("determinism")));
    emit(criterion_8());
    emit(criterion_9(&bench));
    let failed: Vec<u8> = lines.iter().filter(|l| l.gating && matches!(l.verdict, Verdict::Fail)).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("gating criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
