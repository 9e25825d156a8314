//! Per-epoch metrics as line-delimited JSON.
//!
//! Each line is one [`MetricsRecord`]. Absent quantities are omitted rather
//! than written as `null`. Writers flush after every record so a killed run
//! leaves a readable prefix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lfm_core::evaluation::EvalEpoch;
use lfm_core::trilevel::EpochMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Search,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub run_id: String,
    pub phase: Phase,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2_weighted_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2_val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_entropy: Option<f64>,
    /// Milliseconds since the run started; only with `wall_clock`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl MetricsRecord {
    pub fn empty(run_id: &str, phase: Phase, epoch: usize) -> Self {
        MetricsRecord {
            run_id: run_id.to_string(),
            phase,
            epoch,
            w1_train_loss: None,
            w2_weighted_loss: None,
            w2_val_loss: None,
            train_loss: None,
            val_error: None,
            test_error: None,
            a_mean: None,
            a_variance: None,
            a_min: None,
            a_max: None,
            arch_entropy: None,
            wall_ms: None,
        }
    }

    pub fn from_search(run_id: &str, m: &EpochMetrics) -> Self {
        MetricsRecord {
            w1_train_loss: Some(m.w1_train_loss),
            w2_weighted_loss: m.w2_weighted_loss,
            w2_val_loss: Some(m.w2_val_loss),
            val_error: m.val_error,
            a_mean: m.a_stats.map(|s| s.mean),
            a_variance: m.a_stats.map(|s| s.variance),
            a_min: m.a_stats.map(|s| s.min),
            a_max: m.a_stats.map(|s| s.max),
            arch_entropy: Some(m.arch_entropy),
            ..Self::empty(run_id, Phase::Search, m.epoch)
        }
    }

    pub fn from_eval(run_id: &str, e: &EvalEpoch) -> Self {
        MetricsRecord {
            train_loss: Some(e.train_loss),
            test_error: Some(e.test_error),
            ..Self::empty(run_id, Phase::Eval, e.epoch)
        }
    }

    fn values(&self) -> [(&'static str, Option<f64>); 11] {
        [
            ("w1_train_loss", self.w1_train_loss),
            ("w2_weighted_loss", self.w2_weighted_loss),
            ("w2_val_loss", self.w2_val_loss),
            ("train_loss", self.train_loss),
            ("val_error", self.val_error),
            ("test_error", self.test_error),
            ("a_mean", self.a_mean),
            ("a_variance", self.a_variance),
            ("a_min", self.a_min),
            ("a_max", self.a_max),
            ("arch_entropy", self.arch_entropy),
        ]
    }

    /// First non-finite field, if any.
    pub fn non_finite_field(&self) -> Option<&'static str> {
        self.values().into_iter().find(|(_, v)| v.is_some_and(|v| !v.is_finite())).map(|(k, _)| k)
    }
}

/// Appends records to a JSONL file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    written: usize,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and any missing parent directories.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), out: BufWriter::new(file), written: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn written(&self) -> usize {
        self.written
    }

    /// Writes one line and flushes. Non-finite values are refused.
    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(field) = record.non_finite_field() {
            return Err(Error::Config(format!("metrics field `{field}` is not finite at epoch {}", record.epoch)));
        }
        let line = serde_json::to_string(record)?;
        let io = |e| Error::io(&self.path, e);
        writeln!(self.out, "{line}").map_err(io)?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
