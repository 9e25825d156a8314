//! Search, discretization and evaluation through the public API only.

use lfm_core::data::{apply_label_noise, make_synthetic, split_dataset, Dataset, NoiseSpec, SyntheticSpec, DEFAULT_FRACTIONS};
use lfm_core::evaluation::{evaluate_architecture, EvalConfig};
use lfm_core::models::{EncoderConfig, InputShape, LearnerConfig};
use lfm_core::search_space::{CellSpec, DiscreteArchitecture, OpSet};
use lfm_core::trilevel::{run_search, Networks, SearchConfig, SearchMode};

fn nets(input: InputShape, op_set: OpSet) -> Networks {
    Networks {
        learner: LearnerConfig { input, width: 4, classes: 3, cell: CellSpec::default(), op_set },
        encoder: EncoderConfig { input, hidden: 4, embed_dim: 4 },
    }
}

fn splits(input: InputShape, n: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let spec = SyntheticSpec { shape: input, ..SyntheticSpec::default() };
    let all = make_synthetic(n, 3, &NoiseSpec::CLEAN, seed, &spec).unwrap();
    let (mut train, val, test) = split_dataset(&all, DEFAULT_FRACTIONS, seed).unwrap();
    apply_label_noise(&mut train, &NoiseSpec::uniform(0.2), seed + 1).unwrap();
    (train, val, test)
}

#[test]
fn features_pipeline_learns_and_serializes() {
    let input = InputShape::Features(5);
    let n = nets(input, OpSet::linear_default());
    let (train, val, test) = splits(input, 240, 5);
    let cfg = SearchConfig { epochs: 4, seed: 5, ..SearchConfig::default() };
    let mut epochs = 0;
    let out = run_search(&n, &cfg, SearchMode::Lfm, &train, &val, |_| epochs += 1).unwrap();
    assert_eq!(epochs, 4);
    assert!(out.state.is_finite());

    let text = out.architecture.to_string();
    assert_eq!(DiscreteArchitecture::parse(&text, &n.learner.op_set).unwrap(), out.architecture);

    let eval = EvalConfig { epochs: 5, seed: 5, ..EvalConfig::default() };
    let res = evaluate_architecture(&n.learner, &out.architecture, &train, &val, &test, &eval, |_| {}).unwrap();
    assert_eq!(res.epochs.len(), 5);
    assert!(res.test_error < 2.0 / 3.0, "chance is 2/3, got {}", res.test_error);
}

#[test]
fn image_search_runs_in_every_mode() {
    let input = InputShape::Image { channels: 1, height: 8, width: 8 };
    let n = nets(input, OpSet::image_default());
    let (train, val, _) = splits(input, 120, 2);
    let cfg = SearchConfig { epochs: 1, batch_train: 16, seed: 2, ..SearchConfig::default() };
    for mode in [SearchMode::Lfm, SearchMode::Darts, SearchMode::SingleSet] {
        let out = run_search(&n, &cfg, mode, &train, &val, |_| {}).unwrap();
        out.architecture.validate(&n.learner.cell).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].a_stats.is_some(), mode != SearchMode::Darts);
    }
}

#[test]
fn dataset_bytes_round_trip() {
    let input = InputShape::Image { channels: 2, height: 4, width: 4 };
    let spec = SyntheticSpec { shape: input, ..SyntheticSpec::default() };
    let ds = make_synthetic(30, 3, &NoiseSpec::uniform(0.5), 9, &spec).unwrap();
    let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.examples.shape(), ds.examples.shape());
    assert!(back.examples.data().iter().zip(ds.examples.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
