//! Search, evaluation and aggregation over seeds.
//!
//! Files for one seed, in the output directory:
//!
//! * `{label}-seed{seed}.jsonl`: search records then evaluation records
//! * `{label}-seed{seed}.arch`: the discretized architecture
//! * `{label}-seed{seed}.lfmw`: the final search state (not for random search)
//!
//! plus `{label}-summary.json` for the whole run and, for ablations,
//! `ablation.md` and `ablation.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lfm_core::evaluation::{evaluate_architecture, random_search, EvalConfig};
use lfm_core::search_space::DiscreteArchitecture;
use lfm_core::trilevel::run_search;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MetricName, RunMode, Splits};
use crate::error::{Error, Result};
use crate::io::{save_architecture, save_weights, state_to_weights};
use crate::metrics::{MetricsRecord, MetricsWriter, Phase};

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub architecture: DiscreteArchitecture,
    /// Validation error of the evaluated search weights after the last epoch.
    pub search_val_error: Option<f64>,
    pub test_error: f64,
    pub metrics_path: PathBuf,
}

fn stamp(record: MetricsRecord, start: Option<Instant>) -> MetricsRecord {
    MetricsRecord { wall_ms: start.map(|s| s.elapsed().as_millis() as u64), ..record }
}

/// Outcome of the search phase for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchPhase {
    pub architecture: DiscreteArchitecture,
    /// Validation error of the evaluated search weights after the last epoch,
    /// or of the best random candidate.
    pub val_error: Option<f64>,
}

/// Runs the configured search for one seed, writing its records, the
/// architecture and (for gradient-based modes) the final search state.
pub fn search_phase(
    cfg: &ExperimentConfig,
    seed: u64,
    splits: &Splits,
    dir: &Path,
    run_id: &str,
    writer: &mut MetricsWriter,
    start: Option<Instant>,
) -> Result<SearchPhase> {
    let nets = cfg.networks(splits.train.input_shape()?, splits.train.classes)?;
    let mut write_err = None;
    let (architecture, val_error) = match cfg.mode.search_mode() {
        Some(mode) => {
            let outcome = run_search(&nets, &cfg.search_config(seed), mode, &splits.train, &splits.val, |m| {
                if write_err.is_none() {
                    write_err = writer.write(&stamp(MetricsRecord::from_search(run_id, m), start)).err();
                }
            })?;
            if let Some(e) = write_err.take() {
                return Err(e);
            }
            save_weights(&state_to_weights(&outcome.state), &dir.join(format!("{run_id}.lfmw")))?;
            let last = outcome.metrics.last().and_then(|m| m.val_error);
            (outcome.architecture, last)
        }
        None => {
            let brief = EvalConfig { epochs: cfg.random_epochs, ..cfg.eval_config(seed) };
            let (best, scored) =
                random_search(&nets.learner, cfg.k, cfg.random_candidates, &splits.train, &splits.val, &brief, seed)?;
            for (i, c) in scored.iter().enumerate() {
                let r = MetricsRecord { val_error: Some(c.val_error), ..MetricsRecord::empty(run_id, Phase::Search, i + 1) };
                writer.write(&stamp(r, start))?;
            }
            let best_error = scored.iter().map(|c| c.val_error).fold(f64::INFINITY, f64::min);
            (best, Some(best_error))
        }
    };
    save_architecture(&architecture, &dir.join(format!("{run_id}.arch")))?;
    Ok(SearchPhase { architecture, val_error })
}

/// Search then evaluation for one seed.
pub fn search_seed(cfg: &ExperimentConfig, seed: u64, splits: &Splits, dir: &Path, label: &str) -> Result<SeedResult> {
    let run_id = format!("{label}-seed{seed}");
    let start = cfg.wall_clock.then(Instant::now);
    let metrics_path = dir.join(format!("{run_id}.jsonl"));
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let phase = search_phase(cfg, seed, splits, dir, &run_id, &mut writer, start)?;
    let test_error = evaluate_seed(cfg, seed, splits, &phase.architecture, &run_id, &mut writer, start)?;
    Ok(SeedResult {
        seed,
        architecture: phase.architecture,
        search_val_error: phase.val_error,
        test_error,
        metrics_path,
    })
}

/// Trains `arch` from scratch on train plus validation and records each epoch.
pub fn evaluate_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    splits: &Splits,
    arch: &DiscreteArchitecture,
    run_id: &str,
    writer: &mut MetricsWriter,
    start: Option<Instant>,
) -> Result<f64> {
    let nets = cfg.networks(splits.train.input_shape()?, splits.train.classes)?;
    let mut write_err = None;
    let out = evaluate_architecture(&nets.learner, arch, &splits.train, &splits.val, &splits.test, &cfg.eval_config(seed), |e| {
        if write_err.is_none() {
            write_err = writer.write(&stamp(MetricsRecord::from_eval(run_id, e), start)).err();
        }
    })?;
    match write_err {
        Some(e) => Err(e),
        None => Ok(out.test_error),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub test_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_val_error: Option<f64>,
    pub architecture: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub kind: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub mode: String,
    pub seeds: Vec<SeedSummary>,
    pub failed: Vec<FailedSeed>,
    /// Over completed seeds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_test_error: Option<f64>,
    /// Sample standard deviation; needs two completed seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_test_error: Option<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Every configured seed. A seed that fails is logged and left out of the
/// aggregate; the run fails only when no seed completes.
pub fn run_experiment(cfg: &ExperimentConfig, label: &str, dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    for &seed in &cfg.seeds {
        let result = cfg.splits(seed).and_then(|s| search_seed(cfg, seed, &s, dir, label));
        match result {
            Ok(r) => {
                log::info!("{label} seed {seed}: test error {:.4}", r.test_error);
                seeds.push(SeedSummary {
                    seed,
                    test_error: r.test_error,
                    search_val_error: r.search_val_error,
                    architecture: r.architecture.to_string(),
                });
            }
            Err(e) => {
                log::warn!("{label} seed {seed} failed and is excluded: {e}");
                failed.push(FailedSeed { seed, kind: e.kind().to_string(), error: e.to_string() });
            }
        }
    }
    let (mean, std) = mean_std(&seeds.iter().map(|s| s.test_error).collect::<Vec<_>>());
    let summary = Summary {
        label: label.to_string(),
        mode: cfg.mode.name().to_string(),
        seeds,
        failed,
        mean_test_error: mean,
        std_test_error: std,
    };
    let path = dir.join(format!("{label}-summary.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&path, e))?;
    if summary.seeds.is_empty() {
        let first = summary.failed.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Config(format!("every seed failed; first error: {first}")));
    }
    Ok(summary)
}

/// The ablation variants, each applied on top of the base configuration.
pub const ABLATION_VARIANTS: [&str; 6] = ["full", "no-u", "no-x", "no-z", "metric:cosine", "metric:l2"];

pub fn ablation_variant(base: &ExperimentConfig, name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig { mode: RunMode::Lfm, no_x: false, no_z: false, no_u: false, ..base.clone() };
    match name {
        "full" => {}
        "no-u" => cfg.no_u = true,
        "no-x" => cfg.no_x = true,
        "no-z" => cfg.no_z = true,
        "metric:dot" => cfg.metric = MetricName::Dot,
        "metric:cosine" => cfg.metric = MetricName::Cosine,
        "metric:l2" => cfg.metric = MetricName::L2,
        other => return Err(Error::Config(format!("unknown ablation variant `{other}`"))),
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_test_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_test_error: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

pub fn ablation_markdown(rows: &[AblationRow], seeds: &[u64]) -> String {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let mut out = format!("seeds: {seeds:?}\n\n| variant | mean test error | std | completed | failed |\n|---|---|---|---|---|\n");
    for r in rows {
        out += &format!(
            "| {} | {} | {} | {} | {} |\n",
            r.variant,
            fmt(r.mean_test_error),
            fmt(r.std_test_error),
            r.completed,
            r.failed
        );
    }
    out
}

/// Runs every variant on the same seeds and writes the comparison table.
pub fn run_ablation(base: &ExperimentConfig, variants: &[&str], dir: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &name in variants {
        let cfg = ablation_variant(base, name)?;
        let label = name.replace(':', "-");
        let row = match run_experiment(&cfg, &label, dir) {
            Ok(s) => AblationRow {
                variant: name.to_string(),
                mean_test_error: s.mean_test_error,
                std_test_error: s.std_test_error,
                completed: s.seeds.len(),
                failed: s.failed.len(),
            },
            Err(e) => {
                log::warn!("ablation variant {name} produced no result: {e}");
                AblationRow {
                    variant: name.to_string(),
                    mean_test_error: None,
                    std_test_error: None,
                    completed: 0,
                    failed: cfg.seeds.len(),
                }
            }
        };
        rows.push(row);
    }
    let md = dir.join("ablation.md");
    std::fs::write(&md, ablation_markdown(&rows, &base.seeds)).map_err(|e| Error::io(&md, e))?;
    let js = dir.join("ablation.json");
    std::fs::write(&js, serde_json::to_string_pretty(&rows)? + "\n").map_err(|e| Error::io(&js, e))?;
    Ok(rows)
}
