use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfm::config::{overrides_from_args, parse_config, parse_override, ExperimentConfig};
use lfm::diagnostics::{gradcheck, oracle_compare};
use lfm::experiment::{evaluate_seed, run_ablation, run_experiment, search_phase, ABLATION_VARIANTS};
use lfm::io::{load_architecture, save_dataset};
use lfm::metrics::MetricsWriter;
use lfm::{Error, Result};
use lfm_core::data::{make_synthetic, NoiseSpec, SyntheticSpec};
use serde_json::json;

/// Learning-from-mistakes architecture search on small synthetic problems.
#[derive(Parser)]
#[command(name = "lfm", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Further overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    rest: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut ov = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        ov.extend(overrides_from_args(&self.rest)?);
        parse_config(self.config.as_deref(), &ov)
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Search only; writes metrics, architecture and search state per seed.
    Search(ConfigArgs),
    /// Trains a saved architecture from scratch and reports test error.
    Evaluate {
        #[arg(long)]
        arch: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Search then evaluation for every seed, with a summary.
    Experiment(ConfigArgs),
    /// Full LFM and ablated variants on the same seeds.
    Ablate {
        /// Comma-separated subset of no-u, no-x, no-z, metric:cosine, metric:l2.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of random networks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimated hypergradients against exact unrolling on tiny problems.
    OracleCompare {
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes a clean synthetic dataset in the `LFMD` format.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    cfg.echo(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Search(args) => {
            let cfg = args.resolve()?;
            let dir = prepare(&cfg)?;
            let label = cfg.mode.name();
            for &seed in &cfg.seeds {
                let splits = cfg.splits(seed)?;
                let run_id = format!("{label}-seed{seed}");
                let mut w = MetricsWriter::create(&dir.join(format!("{run_id}-search.jsonl")))?;
                let start = cfg.wall_clock.then(std::time::Instant::now);
                let p = search_phase(&cfg, seed, &splits, &dir, &run_id, &mut w, start)?;
                print(json!({"seed": seed, "architecture": p.architecture.to_string(), "val_error": p.val_error}));
            }
        }
        Verb::Evaluate { arch, cfg: args } => {
            let cfg = args.resolve()?;
            let dir = prepare(&cfg)?;
            for &seed in &cfg.seeds {
                let splits = cfg.splits(seed)?;
                let nets = cfg.networks(splits.train.input_shape()?, splits.train.classes)?;
                let a = load_architecture(&arch, &nets.learner.op_set)?;
                let run_id = format!("eval-seed{seed}");
                let mut w = MetricsWriter::create(&dir.join(format!("{run_id}.jsonl")))?;
                let start = cfg.wall_clock.then(std::time::Instant::now);
                let err = evaluate_seed(&cfg, seed, &splits, &a, &run_id, &mut w, start)?;
                print(json!({"seed": seed, "test_error": err}));
            }
        }
        Verb::Experiment(args) => {
            let cfg = args.resolve()?;
            let dir = prepare(&cfg)?;
            let s = run_experiment(&cfg, cfg.mode.name(), &dir)?;
            print(serde_json::to_value(&s)?);
        }
        Verb::Ablate { variants, cfg: args } => {
            let cfg = args.resolve()?;
            let dir = prepare(&cfg)?;
            let mut names: Vec<String> = vec!["full".into()];
            match variants {
                Some(v) => names.extend(v.into_iter().filter(|n| n != "full")),
                None => names.extend(ABLATION_VARIANTS[1..].iter().map(|s| s.to_string())),
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            for n in &refs {
                lfm::experiment::ablation_variant(&cfg, n)?;
            }
            let rows = run_ablation(&cfg, &refs, &dir)?;
            print(serde_json::to_value(&rows)?);
        }
        Verb::Gradcheck { count, seed } => {
            let r = gradcheck(count, seed)?;
            print(serde_json::to_value(&r)?);
            if !r.passed {
                return Err(Error::Config(format!("{} of {count} networks exceeded the tolerance", r.failures)));
            }
        }
        Verb::OracleCompare { states, seed } => {
            print(serde_json::to_value(oracle_compare(states, seed)?)?);
        }
        Verb::GenData { out, seed, cfg: args } => {
            let cfg = args.resolve()?;
            let spec = SyntheticSpec { shape: cfg.input_shape(), ..SyntheticSpec::default() };
            let ds = make_synthetic(cfg.n, cfg.classes, &NoiseSpec::CLEAN, seed, &spec)?;
            save_dataset(&ds, &out)?;
            print(json!({"path": out, "examples": ds.len(), "classes": ds.classes}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
