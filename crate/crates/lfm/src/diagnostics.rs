//! Self-checks: finite-difference gradient checks of random networks and
//! agreement of the search hypergradients with the exact unrolled oracle.

use lfm_core::data::{make_synthetic, NoiseSpec, SyntheticSpec};
use lfm_core::models::{EncoderConfig, InputShape, LearnerConfig};
use lfm_core::reweight::{Ablation, ReweightConfig, SimilarityMetric};
use lfm_core::rng::derive_seed;
use lfm_core::search_space::{ArchitectureParams, CellSpec, OpSet};
use lfm_core::tensor::{cosine_similarity, Array, RandomNetwork};
use lfm_core::trilevel::{
    exact_hypergradient_oracle, hypergradients, stage1_update, stage2_update, Networks, SearchConfig, SearchState, Want,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Relative error allowed by [`gradcheck`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub networks: usize,
    pub max_error: f64,
    pub worst_seed: u64,
    pub failures: usize,
    pub passed: bool,
}

/// Checks `count` random networks drawn from seeds derived from `seed`.
pub fn gradcheck(count: usize, seed: u64) -> Result<GradcheckReport> {
    let mut max_error = 0.0f64;
    let mut worst_seed = seed;
    let mut failures = 0;
    for i in 0..count {
        let s = derive_seed(seed, i as u64);
        let err = RandomNetwork::sample(s).check(GRADCHECK_STEP)?;
        if err.is_nan() || err >= GRADCHECK_TOLERANCE {
            failures += 1;
        }
        if err.is_nan() || err > max_error {
            max_error = err;
            worst_seed = s;
        }
    }
    Ok(GradcheckReport { networks: count, max_error, worst_seed, failures, passed: failures == 0 })
}

/// Cosine agreement of the estimated and exact hypergradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub states: usize,
    pub min_arch_cosine: f64,
    pub mean_arch_cosine: f64,
    pub min_encoder_cosine: f64,
    pub min_coefficient_cosine: f64,
}

/// A small feature-input problem (3 features, 2 classes, 16 train and 8
/// validation examples) with a search state whose `r` is nonzero and whose
/// architecture softmax is sharp.
pub fn tiny_problem(seed: u64) -> Result<(Networks, SearchConfig, SearchState, lfm_core::data::Batch, lfm_core::data::Batch)> {
    let input = InputShape::Features(3);
    let nets = Networks {
        learner: LearnerConfig { input, width: 4, classes: 2, cell: CellSpec::default(), op_set: OpSet::linear_default() },
        encoder: EncoderConfig { input, hidden: 4, embed_dim: 3 },
    };
    let cfg = SearchConfig {
        batch_train: 16,
        batch_val: 8,
        lr_w1: 0.1,
        lr_w2: 0.1,
        reweight: ReweightConfig { metric: SimilarityMetric::Dot, ablation: Ablation::NONE },
        seed,
        ..SearchConfig::default()
    };
    let mut state = SearchState::init(&nets, &cfg)?;
    state.r = Array::from_vec((0..8).map(|i| 0.5 * (i as f64 + seed as f64).sin()).collect());
    state.arch = ArchitectureParams::from_logits(state.arch.logits().scaled(300.0))?;
    let spec = SyntheticSpec { shape: input, ..SyntheticSpec::default() };
    let all = make_synthetic(24, 2, &NoiseSpec::uniform(0.2), derive_seed(seed, 60), &spec)?;
    let train = all.batch(&(0..16).collect::<Vec<_>>())?;
    let val = all.batch(&(16..24).collect::<Vec<_>>())?;
    Ok((nets, cfg, state, train, val))
}

/// Compares the estimator with the oracle on `states` tiny problems.
pub fn oracle_compare(states: usize, seed: u64) -> Result<OracleReport> {
    let mut arch = Vec::with_capacity(states);
    let mut enc = Vec::with_capacity(states);
    let mut coef = Vec::with_capacity(states);
    for i in 0..states {
        let (nets, cfg, s, t, v) = tiny_problem(derive_seed(seed, i as u64))?;
        let s1 = stage1_update(&nets, &cfg, &s, &t)?;
        let s2 = stage2_update(&nets, &cfg, &s, &s1.w1_next, &t, &v)?;
        let h = hypergradients(&nets, &cfg, &s, &s1.w1_next, &s2.w2_next, &s2.bundle.a, &t, &v, Want::ALL)?;
        let o = exact_hypergradient_oracle(&nets, &cfg, &s, &t, &v)?;
        arch.push(cosine_similarity(&h.arch, &o.arch)?);
        enc.push(cosine_similarity(&h.encoder.flatten(), &o.encoder.flatten())?);
        coef.push(cosine_similarity(&h.coefficients, &o.coefficients)?);
    }
    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OracleReport {
        states,
        min_arch_cosine: min(&arch),
        mean_arch_cosine: arch.iter().sum::<f64>() / states.max(1) as f64,
        min_encoder_cosine: min(&enc),
        min_coefficient_cosine: min(&coef),
    })
}
