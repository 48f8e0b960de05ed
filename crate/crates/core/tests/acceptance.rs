//! End-to-end acceptance checks, one pass/fail line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. MNIST is
//! read from `$MNIST_DIR` when set, otherwise from `<workspace>/data/mnist`
//! (see `scripts/fetch_mnist.sh`).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ctcl::config::{DatasetConfig, TrainConfig};
use ctcl::data::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages};
use ctcl::gradcheck::{
    self, check_contrastive_centers, check_contrastive_features, random_instance, Sizes,
};
use ctcl::losses::contrastive_center_forward;
use ctcl::trainer::{train_on, Splits, CHECKPOINT_FILE, METRICS_FILE};
use ctcl::{
    center_loss, contrastive_center_loss, CenterBank, ContrastiveCenterConfig, Error, FeatureBatch,
    LabelBatch, RngSeed,
};
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_config(name: &str, out: &Path) -> TrainConfig {
    let mut cfg =
        TrainConfig::load(&workspace().join("configs").join(name)).expect("shipped config parses");
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let t = started.elapsed();
    (
        t < limit,
        format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()),
    )
}

/// Scalar-loop reference for the contrastive-center objective.
fn naive_forward(x: &Array2<f64>, y: &[usize], c: &Array2<f64>, delta: f64) -> f64 {
    let (m, d) = x.dim();
    let k = c.nrows();
    let mut total = 0.0;
    for i in 0..m {
        let mut own = 0.0;
        let mut others = 0.0;
        for j in 0..k {
            let mut s = 0.0;
            for t in 0..d {
                let diff = x[[i, t]] - c[[j, t]];
                s += diff * diff;
            }
            if j == y[i] {
                own = s;
            } else {
                others += s;
            }
        }
        total += own / (others + delta);
    }
    0.5 * total
}

fn forward_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..=32);
        let k = rng.random_range(2..=10);
        let d = rng.random_range(1..=16);
        let x = Array2::from_shape_simple_fn((m, d), || rng.random_range(-5.0..5.0));
        let c = Array2::from_shape_simple_fn((k, d), || rng.random_range(-5.0..5.0));
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let delta = rng.random_range(0.1..2.0);
        let cfg = ContrastiveCenterConfig::new(delta, 0.1).unwrap();
        let fast = contrastive_center_forward(
            &FeatureBatch::new(x.clone()).unwrap(),
            &LabelBatch::new(y.clone(), k).unwrap(),
            &CenterBank::from_array(c.clone()).unwrap(),
            &cfg,
        )
        .unwrap();
        let slow = naive_forward(&x, &y, &c, delta);
        worst = worst.max((fast - slow).abs() / slow.abs().max(f64::MIN_POSITIVE));
    }
    let (fast_enough, time) = within(Duration::from_secs(5), started);
    outcome(
        worst <= 1e-12 && fast_enough,
        format!("100 instances, max relative error {worst:.2e} (limit 1e-12), {time}"),
    )
}

fn loss_gradients() -> Outcome {
    let started = Instant::now();
    let cfg = ContrastiveCenterConfig::default();
    let mut worst = (0.0, String::new());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in 0..50u64 {
        let sizes = if s == 0 {
            Sizes { m: 1, k: 2, d: 1 }
        } else {
            Sizes {
                m: rng.random_range(1..=32),
                k: rng.random_range(2..=10),
                d: rng.random_range(1..=16),
            }
        };
        let inst = random_instance(RngSeed(s), sizes).unwrap();
        for r in [
            check_contrastive_features(&inst, &cfg).unwrap(),
            check_contrastive_centers(&inst, &cfg).unwrap(),
        ] {
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, format!("{} {}", r.name, r.worst));
            }
        }
    }

    // x = 1, centers [0, 3], label 0, delta 1
    let out = contrastive_center_loss(
        &FeatureBatch::new(Array2::from_elem((1, 1), 1.0)).unwrap(),
        &LabelBatch::new(vec![0], 2).unwrap(),
        &CenterBank::from_array(Array2::from_shape_vec((2, 1), vec![0.0, 3.0]).unwrap()).unwrap(),
        &cfg,
    )
    .unwrap();
    let gc = out.grad_centers.unwrap();
    let hand = [
        (out.grad_features[[0, 0]], 0.28),
        (gc[[0, 0]], -0.2),
        (gc[[1, 0]], -0.08),
    ];
    let hand_ok = hand.iter().all(|(got, want)| (got - want).abs() < 1e-12);
    let (fast_enough, time) = within(Duration::from_secs(10), started);
    outcome(
        worst.0 < 1e-5 && hand_ok && fast_enough,
        format!(
            "50 instances, max relative error {:.2e} (limit 1e-5) at {}; minimal case dx={} dc1={} dc2={}; {time}",
            worst.0, worst.1, hand[0].0, hand[1].0, hand[2].0
        ),
    )
}

fn network_gradients() -> Outcome {
    let started = Instant::now();
    let cfg = ContrastiveCenterConfig::new(1.0, 0.5).unwrap();
    let results = gradcheck::check_network(RngSeed(3), &[4, 3, 2, 2], 8, &cfg).unwrap();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let (fast_enough, time) = within(Duration::from_secs(10), started);
    outcome(
        results.iter().all(|r| r.passed()) && fast_enough,
        format!(
            "4-3-2-2 net, {} coordinates, max relative error {:.2e} (limit 1e-5) at {}; {time}",
            results.iter().map(|r| r.coordinates).sum::<usize>(),
            worst.max_rel_err,
            worst.worst
        ),
    )
}

fn zero_minimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-3.0..3.0));
    let y = vec![0, 3, 1, 1, 2, 0];
    let x = Array2::from_shape_fn((y.len(), 3), |(i, t)| c[[y[i], t]]);
    let (x, y, c) = (
        FeatureBatch::new(x).unwrap(),
        LabelBatch::new(y, 4).unwrap(),
        CenterBank::from_array(c).unwrap(),
    );
    let cl = center_loss(&x, &y, &c).unwrap();
    let ct = contrastive_center_loss(&x, &y, &c, &ContrastiveCenterConfig::default()).unwrap();
    let zero = |o: &ctcl::LossOutput| {
        o.value == 0.0
            && o.grad_features.iter().all(|&v| v == 0.0)
            && o.grad_centers
                .as_ref()
                .is_none_or(|g| g.iter().all(|&v| v == 0.0))
    };
    outcome(
        zero(&cl) && zero(&ct),
        format!(
            "center loss {} / contrastive-center {} with exactly zero gradients",
            cl.value, ct.value
        ),
    )
}

fn synthetic_spread(scratch: &Path) -> Outcome {
    let started = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut reports = Vec::new();
        for name in [
            "synthetic-softmax.toml",
            "synthetic-center.toml",
            "synthetic-contrastive.toml",
        ] {
            let mut cfg = load_config(name, &scratch.join(format!("{seed}-{name}")));
            cfg.seed = RngSeed(seed);
            let splits = Splits::load(&cfg.dataset).unwrap();
            let out = train_on(&cfg, &splits, |_| {}).unwrap();
            reports.push(out.records.last().unwrap().test.unwrap());
        }
        let [soft, center, contrastive] = [&reports[0], &reports[1], &reports[2]];
        let factor = contrastive.spread_ratio / center.spread_ratio;
        let ordered = soft.empirical.spread_ratio < center.empirical.spread_ratio
            && center.empirical.spread_ratio < contrastive.empirical.spread_ratio;
        ok &= factor >= 2.0 && ordered;
        lines.push(format!(
            "seed {seed}: ratio contrastive/center {factor:.2} (need >= 2), class-mean ratios {:.2} < {:.2} < {:.2} {}, inter_spread contrastive/center {:.2}",
            soft.empirical.spread_ratio,
            center.empirical.spread_ratio,
            contrastive.empirical.spread_ratio,
            if ordered { "holds" } else { "violated" },
            contrastive.inter_spread / center.inter_spread,
        ));
    }
    let (fast_enough, time) = within(Duration::from_secs(120), started);
    lines.push(time);
    outcome(ok && fast_enough, lines.join("; "))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/mnist"))
}

fn mnist_run(scratch: &Path) -> Outcome {
    let dir = mnist_dir();
    if !dir.join("train-images-idx3-ubyte").exists() {
        return outcome(
            false,
            format!(
                "MNIST not found in {} (run scripts/fetch_mnist.sh or set MNIST_DIR)",
                dir.display()
            ),
        );
    }
    let started = Instant::now();
    let mut cfgs: Vec<TrainConfig> = [
        "mnist-softmax.toml",
        "mnist-center.toml",
        "mnist-contrastive.toml",
    ]
    .iter()
    .map(|n| {
        let mut cfg = load_config(n, &scratch.join(n));
        if let DatasetConfig::Mnist(m) = &mut cfg.dataset {
            m.train_images = dir.join("train-images-idx3-ubyte");
            m.train_labels = dir.join("train-labels-idx1-ubyte");
            m.test_images = dir.join("t10k-images-idx3-ubyte");
            m.test_labels = dir.join("t10k-labels-idx1-ubyte");
        }
        cfg
    })
    .collect();
    let splits = Splits::load(&cfgs[0].dataset).unwrap();
    let sizes_ok = splits.train.len() == 10_000 && splits.test.len() == 10_000;
    let reports: Vec<_> = cfgs
        .iter_mut()
        .map(|cfg| {
            cfg.validate().unwrap();
            train_on(cfg, &splits, |_| {})
                .unwrap()
                .records
                .last()
                .unwrap()
                .test
                .unwrap()
        })
        .collect();
    let [soft, center, contrastive] = [&reports[0], &reports[1], &reports[2]];
    let spread = contrastive.inter_spread / center.inter_spread;
    let (fast_enough, time) = within(Duration::from_secs(900), started);
    let checks = [
        soft.accuracy >= 0.95,
        contrastive.accuracy >= soft.accuracy - 0.005,
        spread >= 2.0,
        sizes_ok,
        fast_enough,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "softmax accuracy {:.4} (need >= 0.95); contrastive accuracy {:.4} (need >= {:.4}); \
             center accuracy {:.4}; inter_spread contrastive/center {spread:.2} (need >= 2); {} train / {} test; {time}",
            soft.accuracy,
            contrastive.accuracy,
            soft.accuracy - 0.005,
            center.accuracy,
            splits.train.len(),
            splits.test.len()
        ),
    )
}

fn determinism(scratch: &Path) -> Outcome {
    let mut ok = true;
    let mut checked = Vec::new();
    for name in [
        "synthetic-softmax.toml",
        "synthetic-center.toml",
        "synthetic-contrastive.toml",
    ] {
        let read = |dir: &Path| {
            let mut cfg = load_config(name, dir);
            cfg.sgd.epochs = 20;
            cfg.eval_every = 1;
            ctcl::train(&cfg, |_| {}).unwrap();
            (
                std::fs::read(dir.join(METRICS_FILE)).unwrap(),
                std::fs::read(dir.join(CHECKPOINT_FILE)).unwrap(),
            )
        };
        let a = read(&scratch.join(format!("a-{name}")));
        let b = read(&scratch.join(format!("b-{name}")));
        let same = a == b;
        ok &= same;
        checked.push(format!(
            "{name} {}",
            if same { "identical" } else { "DIFFERENT" }
        ));
    }
    outcome(
        ok,
        format!("JSONL and checkpoint bytes: {}", checked.join(", ")),
    )
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    use std::io::Write;
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

fn idx_parsing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images = IdxImages {
        n: 7,
        rows: 3,
        cols: 5,
        pixels: (0..7 * 15).map(|_| rng.random()).collect(),
    };
    let labels: Vec<u8> = (0..7).map(|_| rng.random_range(0..10)).collect();
    let img_bytes = write_idx_images(&images);
    let lbl_bytes = write_idx_labels(&labels);
    let round_trip = read_idx_images(&img_bytes).unwrap() == images
        && read_idx_labels(&lbl_bytes).unwrap() == labels
        && read_idx_images(&gzip(&img_bytes)).unwrap() == images
        && read_idx_labels(&gzip(&lbl_bytes)).unwrap() == labels;
    let fixture = [
        0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 0, 255,
    ];
    let decoded = read_idx_images(&fixture).unwrap().to_inputs();
    let fixture_ok = decoded.iter().copied().eq([0.0, 1.0, 0.0, 1.0]);
    let wrong_magic = matches!(read_idx_images(&lbl_bytes), Err(Error::Format(_)))
        && matches!(read_idx_labels(&img_bytes), Err(Error::Format(_)));
    let truncated = matches!(
        read_idx_images(&img_bytes[..img_bytes.len() - 4]),
        Err(Error::Length {
            expected: 105,
            actual: 101
        })
    ) && matches!(
        read_idx_labels(&gzip(&lbl_bytes[..lbl_bytes.len() - 1])),
        Err(Error::Length {
            expected: 7,
            actual: 6
        })
    );
    outcome(
        round_trip && fixture_ok && wrong_magic && truncated,
        format!(
            "round trip plain+gzip {round_trip}, 2x2 fixture {fixture_ok}, wrong magic -> format error {wrong_magic}, \
             truncated -> length error {truncated}"
        ),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let criteria: [(&str, Check); 8] = [
        ("forward oracle equivalence", Box::new(forward_oracle)),
        ("loss gradient verification", Box::new(loss_gradients)),
        ("full-network gradient check", Box::new(network_gradients)),
        ("zero-minimum property", Box::new(zero_minimum)),
        (
            "synthetic spread comparison",
            Box::new(|| synthetic_spread(&scratch.path().join("c5"))),
        ),
        (
            "MNIST desk-scale run",
            Box::new(|| mnist_run(&scratch.path().join("c6"))),
        ),
        (
            "determinism",
            Box::new(|| determinism(&scratch.path().join("c7"))),
        ),
        ("IDX parsing", Box::new(idx_parsing)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        failed += usize::from(!r.passed);
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
