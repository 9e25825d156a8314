//! Experiment configuration.
//!
//! A flat TOML table; every key is optional and unknown keys are rejected.
//! The full schema with defaults is in the README. Command-line
//! overrides (`--key value`, `--key=value` or `--set key=value`) replace
//! file values and are parsed as TOML values, falling back to strings.

use std::path::{Path, PathBuf};

use lfm_core::data::{apply_label_noise, make_synthetic, split_dataset, Dataset, NoiseSpec, SyntheticSpec, DEFAULT_FRACTIONS};
use lfm_core::evaluation::EvalConfig;
use lfm_core::models::{EncoderConfig, InputShape, LearnerConfig};
use lfm_core::reweight::{Ablation, ReweightConfig, SimilarityMetric};
use lfm_core::rng::derive_seed;
use lfm_core::search_space::{CellOutput, CellSpec, OpKind, OpSet};
use lfm_core::trilevel::{Networks, Order, SearchConfig, SearchMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_dataset;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "LFM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "lfm-runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Lfm,
    DartsBaseline,
    RandomSearch,
    SingleSetBaseline,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Lfm => "lfm",
            RunMode::DartsBaseline => "darts-baseline",
            RunMode::RandomSearch => "random-search",
            RunMode::SingleSetBaseline => "single-set-baseline",
        }
    }

    /// The gradient-based search this mode runs, if any.
    pub fn search_mode(self) -> Option<SearchMode> {
        match self {
            RunMode::Lfm => Some(SearchMode::Lfm),
            RunMode::DartsBaseline => Some(SearchMode::Darts),
            RunMode::SingleSetBaseline => Some(SearchMode::SingleSet),
            RunMode::RandomSearch => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    First,
    #[default]
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    #[default]
    Dot,
    Cosine,
    #[serde(alias = "neg-l2")]
    L2,
}

impl From<MetricName> for SimilarityMetric {
    fn from(m: MetricName) -> Self {
        match m {
            MetricName::Dot => SimilarityMetric::Dot,
            MetricName::Cosine => SimilarityMetric::Cosine,
            MetricName::L2 => SimilarityMetric::NegL2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[default]
    Image,
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellOutputName {
    #[default]
    Sum,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub seeds: Vec<u64>,
    /// Unset: `$LFM_OUTPUT_DIR`, then `lfm-runs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Adds `wall_ms` to metrics records (breaks byte-level determinism).
    pub wall_clock: bool,

    pub lr_w1: f64,
    pub lr_w2: f64,
    pub lr_a: f64,
    pub lr_v: f64,
    pub lr_r: f64,
    pub momentum: f64,
    pub cosine_decay: bool,
    pub eps_scale: f64,
    pub order: OrderName,
    pub batch_train: usize,
    pub batch_val: usize,
    pub epochs: usize,
    pub metric: MetricName,
    pub no_x: bool,
    pub no_z: bool,
    pub no_u: bool,
    pub k: usize,
    pub weighted_sum: bool,
    pub u_path: bool,

    pub width: usize,
    pub nodes: usize,
    pub cell_output: CellOutputName,
    /// Empty: the default set for the input kind.
    pub ops: Vec<String>,
    pub encoder_hidden: usize,
    pub embed_dim: usize,

    /// `LFMD` file to split; synthetic data when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub n: usize,
    pub classes: usize,
    pub input: InputKind,
    pub channels: usize,
    pub image_size: usize,
    pub features: usize,
    /// Fraction of training-split labels flipped; validation and test stay clean.
    pub noise_rate: f64,
    pub split: [f64; 3],

    pub eval_epochs: usize,
    pub eval_lr: f64,
    pub eval_momentum: f64,
    pub eval_batch: usize,

    pub random_candidates: usize,
    pub random_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        let e = EvalConfig::default();
        ExperimentConfig {
            mode: RunMode::Lfm,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: None,
            wall_clock: false,
            lr_w1: s.lr_w1,
            lr_w2: s.lr_w2,
            lr_a: s.lr_a,
            lr_v: s.lr_v,
            lr_r: s.lr_r,
            momentum: s.momentum,
            cosine_decay: s.cosine_decay,
            eps_scale: s.eps_scale,
            order: OrderName::Second,
            batch_train: s.batch_train,
            batch_val: s.batch_val,
            epochs: s.epochs,
            metric: MetricName::Dot,
            no_x: false,
            no_z: false,
            no_u: false,
            k: s.k,
            weighted_sum: s.weighted_sum,
            u_path: s.u_path,
            width: 4,
            nodes: 2,
            cell_output: CellOutputName::Sum,
            ops: Vec::new(),
            encoder_hidden: 4,
            embed_dim: 8,
            data: None,
            n: 2000,
            classes: 4,
            input: InputKind::Image,
            channels: 1,
            image_size: 8,
            features: 8,
            noise_rate: 0.2,
            split: DEFAULT_FRACTIONS,
            eval_epochs: e.epochs,
            eval_lr: e.lr,
            eval_momentum: e.momentum,
            eval_batch: e.batch,
            random_candidates: 8,
            random_epochs: 2,
        }
    }
}

/// Train, validation and test splits of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.search_config(self.seeds[0]).validate()?;
        self.eval_config(self.seeds[0]).validate()?;
        NoiseSpec::uniform(self.noise_rate).validate()?;
        self.op_set()?;
        if self.data.is_none() && (self.n < self.classes || self.classes < 2) {
            return Err(Error::Config(format!("need n >= classes >= 2 (n {}, classes {})", self.n, self.classes)));
        }
        if self.mode == RunMode::RandomSearch && self.random_candidates == 0 {
            return Err(Error::Config("random_candidates must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        Ablation { no_x: self.no_x, no_z: self.no_z, no_u: self.no_u }
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            lr_w1: self.lr_w1,
            lr_w2: self.lr_w2,
            lr_a: self.lr_a,
            lr_v: self.lr_v,
            lr_r: self.lr_r,
            momentum: self.momentum,
            cosine_decay: self.cosine_decay,
            eps_scale: self.eps_scale,
            order: match self.order {
                OrderName::First => Order::First,
                OrderName::Second => Order::Second,
            },
            batch_train: self.batch_train,
            batch_val: self.batch_val,
            epochs: self.epochs,
            reweight: ReweightConfig { metric: self.metric.into(), ablation: self.ablation() },
            k: self.k,
            seed,
            weighted_sum: self.weighted_sum,
            u_path: self.u_path,
        }
    }

    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            epochs: self.eval_epochs,
            lr: self.eval_lr,
            momentum: self.eval_momentum,
            batch: self.eval_batch,
            cosine_decay: true,
            seed,
        }
    }

    /// Shape of synthetic examples.
    pub fn input_shape(&self) -> InputShape {
        match self.input {
            InputKind::Image => {
                InputShape::Image { channels: self.channels, height: self.image_size, width: self.image_size }
            }
            InputKind::Features => InputShape::Features(self.features),
        }
    }

    pub fn op_set(&self) -> Result<OpSet> {
        if self.ops.is_empty() {
            return Ok(match self.input {
                InputKind::Image => OpSet::image_default(),
                InputKind::Features => OpSet::linear_default(),
            });
        }
        let ops = self.ops.iter().map(|s| s.parse::<OpKind>()).collect::<lfm_core::Result<Vec<_>>>()?;
        Ok(OpSet::new(ops)?)
    }

    pub fn networks(&self, input: InputShape, classes: usize) -> Result<Networks> {
        let output = match self.cell_output {
            CellOutputName::Sum => CellOutput::Sum,
            CellOutputName::Concat => CellOutput::Concat,
        };
        let op_set = match (self.ops.is_empty(), input) {
            (true, InputShape::Image { .. }) => OpSet::image_default(),
            (true, InputShape::Features(_)) => OpSet::linear_default(),
            (false, _) => self.op_set()?,
        };
        let learner = LearnerConfig { input, width: self.width, classes, cell: CellSpec::new(self.nodes, output)?, op_set };
        learner.validate()?;
        Ok(Networks { learner, encoder: EncoderConfig { input, hidden: self.encoder_hidden, embed_dim: self.embed_dim } })
    }

    /// Data for `seed`: the configured file or a synthetic set, split, with
    /// label noise on the training split only.
    pub fn splits(&self, seed: u64) -> Result<Splits> {
        let full = match &self.data {
            Some(path) => load_dataset(path)?,
            None => {
                let spec = SyntheticSpec { shape: self.input_shape(), ..SyntheticSpec::default() };
                make_synthetic(self.n, self.classes, &NoiseSpec::CLEAN, seed, &spec)?
            }
        };
        let (mut train, val, test) = split_dataset(&full, self.split, seed)?;
        apply_label_noise(&mut train, &NoiseSpec::uniform(self.noise_rate), derive_seed(seed, 50))?;
        Ok(Splits { train, val, test })
    }

    /// The configured directory, else `$LFM_OUTPUT_DIR`, else `lfm-runs`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration to `<dir>/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value` and normalizes dashes in the key.
pub fn parse_override(item: &str) -> Result<(String, String)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    Ok((k.trim().trim_start_matches("--").replace('-', "_"), v.trim().to_string()))
}

/// Collects overrides from `--key value`, `--key=value` and
/// `--set key=value` arguments.
pub fn overrides_from_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        };
        if flag == "set" {
            let item = it.next().ok_or_else(|| Error::Config("--set needs key=value".into()))?;
            out.push(parse_override(item)?);
        } else if flag.contains('=') {
            out.push(parse_override(flag)?);
        } else {
            let value = it.next().ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
            out.push((flag.replace('-', "_"), value.clone()));
        }
    }
    Ok(out)
}

/// Defaults, then the file, then the overrides in order.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        table.insert(k.clone(), parse_value(v));
    }
    let cfg = ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn empty_config_gives_documented_defaults() {
        let cfg = parse_config(None, &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.order, OrderName::Second);
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.metric, MetricName::Dot);
        assert_eq!(cfg.batch_val, 8);
        assert_eq!(cfg.mode, RunMode::Lfm);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(None, &[o("lr_w3", "0.1")]).unwrap_err().to_string();
        assert!(err.contains("lr_w3"), "{err}");
    }

    #[test]
    fn type_mismatch_is_an_error() {
        assert!(parse_config(None, &[o("epochs", "\"many\"")]).is_err());
        assert!(parse_config(None, &[o("metric", "manhattan")]).is_err());
    }

    #[test]
    fn override_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "lr_a = 0.5\nmode = \"darts-baseline\"\nseeds = [3]\n").unwrap();
        let cfg = parse_config(Some(&path), &[o("lr_a", "0.25")]).unwrap();
        assert_eq!(cfg.lr_a, 0.25);
        assert_eq!(cfg.mode, RunMode::DartsBaseline);
        assert_eq!(cfg.seeds, vec![3]);
    }

    #[test]
    fn argument_forms() {
        let args: Vec<String> =
            ["--lr-a", "0.3", "--metric=cosine", "--set", "seeds=[1,2]"].iter().map(|s| s.to_string()).collect();
        let ov = overrides_from_args(&args).unwrap();
        let cfg = parse_config(None, &ov).unwrap();
        assert_eq!(cfg.lr_a, 0.3);
        assert_eq!(cfg.metric, MetricName::Cosine);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert!(overrides_from_args(&["stray".to_string()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig { output_dir: Some("out".into()), ops: vec!["conv3x3".into(), "zero".into()], ..Default::default() };
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn noise_hits_only_the_training_split() {
        let cfg = ExperimentConfig { n: 120, ..Default::default() };
        let s = cfg.splits(3).unwrap();
        assert_eq!(s.train.flipped_count(), Some((0.2 * s.train.len() as f64).round() as usize));
        assert_eq!(s.val.flipped_count(), Some(0));
        assert_eq!(s.test.flipped_count(), Some(0));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 120);
        assert_eq!(cfg.splits(3).unwrap(), s);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse_config(None, &[o("seeds", "[]")]).is_err());
        assert!(parse_config(None, &[o("lr_a", "-1")]).is_err());
        assert!(parse_config(None, &[o("noise_rate", "1.5")]).is_err());
        assert!(parse_config(None, &[o("ops", "[\"linear\"]")]).is_ok());
        assert!(parse_config(None, &[o("ops", "[\"bogus\"]")]).is_err());
    }
}
