use std::path::Path;

use ctcl::config::{DatasetConfig, LossMode, SyntheticConfig, TrainConfig};
use ctcl::metrics::accuracy;
use ctcl::trainer::{embed, train_on, Splits};
use ctcl::{RngSeed, SgdConfig};

fn config(mode: LossMode, seed: u64, epochs: usize, out: &Path) -> TrainConfig {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic-contrastive.toml"),
    )
    .unwrap();
    let mut cfg = TrainConfig::from_toml_str(&text, out).unwrap();
    cfg.loss_mode = mode;
    if mode == LossMode::SoftmaxOnly {
        cfg.lambda = 0.0;
    }
    cfg.seed = RngSeed(seed);
    cfg.sgd.epochs = epochs;
    cfg.eval_every = 1;
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn loss_decreases_in_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [
        LossMode::SoftmaxOnly,
        LossMode::Center,
        LossMode::ContrastiveCenter,
    ] {
        for seed in [1, 2, 3] {
            let cfg = config(mode, seed, 10, dir.path());
            let splits = Splits::load(&cfg.dataset).unwrap();
            let r = train_on(&cfg, &splits, |_| {}).unwrap().records;
            assert!(
                r[9].train_loss < r[0].train_loss,
                "{mode:?} seed {seed}: {} -> {}",
                r[0].train_loss,
                r[9].train_loss
            );
        }
    }
}

#[test]
fn contrastive_centers_keep_spreading() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1, 2, 3] {
        let cfg = config(LossMode::ContrastiveCenter, seed, 40, dir.path());
        let splits = Splits::load(&cfg.dataset).unwrap();
        let spreads: Vec<f64> = train_on(&cfg, &splits, |_| {})
            .unwrap()
            .records
            .iter()
            .map(|r| r.test.as_ref().unwrap().inter_spread)
            .collect();
        for w in spreads[spreads.len() / 2 - 1..].windows(2) {
            assert!(w[1] >= w[0], "seed {seed}: {spreads:?}");
        }
    }
}

#[test]
fn zero_lambda_matches_softmax_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let base = config(LossMode::SoftmaxOnly, 4, 5, &dir.path().join("s"));
    let splits = Splits::load(&base.dataset).unwrap();
    let soft = train_on(&base, &splits, |_| {}).unwrap();
    for mode in [LossMode::Center, LossMode::ContrastiveCenter] {
        let mut cfg = config(mode, 4, 5, &dir.path().join(mode.as_str()));
        cfg.lambda = 0.0;
        let out = train_on(&cfg, &splits, |_| {}).unwrap();
        assert_eq!(
            out.checkpoint.params.flatten(),
            soft.checkpoint.params.flatten(),
            "{mode:?}"
        );
        for (a, b) in out.records.iter().zip(&soft.records) {
            assert_eq!(
                a.train_softmax_loss.to_bits(),
                b.train_softmax_loss.to_bits()
            );
        }
    }
}

#[test]
fn softmax_separates_two_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(LossMode::SoftmaxOnly, 1, 50, dir.path());
    cfg.layer_dims = vec![2, 8, 2, 2];
    cfg.sgd = SgdConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        weight_decay: 0.0,
        epochs: 50,
        batch_size: 16,
    };
    cfg.dataset = DatasetConfig::Synthetic(SyntheticConfig {
        k: 2,
        d: 2,
        n_per_class: 100,
        test_n_per_class: 20,
        mean_radius: 3.0,
        cluster_std: 0.3,
        seed: RngSeed(8),
    });
    cfg.validate().unwrap();
    let splits = Splits::load(&cfg.dataset).unwrap();
    let out = train_on(&cfg, &splits, |_| {}).unwrap();
    let (_, logits) = embed(&out.checkpoint.params, splits.train.inputs_view()).unwrap();
    assert_eq!(accuracy(logits.view(), &splits.train.labels).unwrap(), 1.0);
}
