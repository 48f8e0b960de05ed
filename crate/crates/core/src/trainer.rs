//! Joint-supervision training loop, evaluation and run artifacts.
//!
//! Per mini-batch: encoder forward, softmax loss plus the configured auxiliary
//! loss, backprop of both gradient streams, an SGD step on the encoder, then a
//! center-bank step computed from the pre-step features.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centers::{init_centers, CenterBank, CenterUpdateConfig};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{DatasetConfig, LossMode, TrainConfig};
use crate::data::{batches_from, make_synthetic_split, LabeledDataset, Split};
use crate::encoder::{encoder_backward, encoder_forward, sgd_step, EncoderParams, MomentumState};
use crate::error::{Error, Result};
use crate::losses::{
    center_loss, contrastive_center_loss, joint_loss, softmax_cross_entropy,
    ContrastiveCenterConfig, JointLoss,
};
use crate::metrics::EmbeddingReport;
use crate::numeric::{FeatureBatch, LabelBatch, Stream};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const METADATA_FILE: &str = "run.json";

const EVAL_CHUNK: usize = 2048;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_softmax_loss: f64,
    /// Unweighted auxiliary loss (0 in softmax-only mode).
    pub train_aux_loss: f64,
    /// Test-split report on evaluation epochs.
    pub test: Option<EmbeddingReport>,
}

/// Wall-clock time per epoch, kept apart from the metrics stream so that
/// stream stays bitwise reproducible.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl Splits {
    pub fn load(dataset: &DatasetConfig) -> Result<Self> {
        match dataset {
            DatasetConfig::Mnist(m) => Ok(Self {
                train: LabeledDataset::load_idx(
                    &m.train_images,
                    &m.train_labels,
                    10,
                    m.train_limit,
                )?,
                test: LabeledDataset::load_idx(&m.test_images, &m.test_labels, 10, m.test_limit)?,
            }),
            DatasetConfig::Synthetic(s) => Ok(Self {
                train: make_synthetic_split(&s.train_spec(), Split::Train)?,
                test: make_synthetic_split(&s.test_spec(), Split::Test)?,
            }),
        }
    }
}

/// Mutable training state: encoder, momentum, center bank and the batching
/// stream.
#[derive(Debug, Clone)]
pub struct Session {
    mode: LossMode,
    loss_cfg: ContrastiveCenterConfig,
    center_cfg: CenterUpdateConfig,
    sgd: crate::encoder::SgdConfig,
    params: EncoderParams,
    momentum: MomentumState,
    centers: CenterBank,
    batch_rng: ChaCha8Rng,
    epochs_completed: usize,
}

/// Mean losses over one epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub total: f64,
    pub softmax: f64,
    pub aux: f64,
}

impl Session {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = EncoderParams::init(&cfg.layer_dims, cfg.seed)?;
        let center_cfg = cfg.center_config()?;
        let centers = init_centers(
            cfg.dataset.num_classes(),
            cfg.embed_dim(),
            &center_cfg,
            cfg.seed,
        )?;
        Ok(Self {
            mode: cfg.loss_mode,
            loss_cfg: cfg.loss_config()?,
            center_cfg,
            sgd: cfg.sgd,
            momentum: MomentumState::zeros(&params),
            params,
            centers,
            batch_rng: cfg.seed.rng(Stream::Batching),
            epochs_completed: 0,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn centers(&self) -> &CenterBank {
        &self.centers
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            centers: self.centers.clone(),
            momentum: self.momentum.clone(),
            epochs_completed: self.epochs_completed as u32,
        }
    }

    /// One optimization step on a batch. Returns `None` if the loss or any
    /// intermediate went non-finite; nothing is updated in that case.
    pub fn step(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<Option<JointLoss>> {
        let k = self.centers.num_classes();
        let labels = LabelBatch::new(labels.to_vec(), k)?;
        let fwd = encoder_forward(&self.params, inputs)?;
        if fwd.logits.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let Ok(features) = FeatureBatch::new(fwd.features) else {
            return Ok(None);
        };
        let softmax = softmax_cross_entropy(fwd.logits.view(), &labels)?;
        let aux = match self.mode {
            LossMode::SoftmaxOnly => None,
            LossMode::Center => Some(center_loss(&features, &labels, &self.centers)?),
            LossMode::ContrastiveCenter => Some(contrastive_center_loss(
                &features,
                &labels,
                &self.centers,
                &self.loss_cfg,
            )?),
        };
        let joint = joint_loss(&softmax, aux.as_ref(), features.dim(), &self.loss_cfg)?;
        if !joint.value.is_finite() {
            return Ok(None);
        }
        let grads = encoder_backward(
            &self.params,
            &fwd.tape,
            joint.grad_logits.view(),
            joint.grad_features.view(),
        )?;
        if grads
            .layers
            .iter()
            .any(|l| l.weight.iter().any(|v| !v.is_finite()))
        {
            return Ok(None);
        }
        sgd_step(&mut self.params, &grads, &self.sgd, &mut self.momentum)?;
        if let Some(gc) = &joint.grad_centers {
            self.centers
                .apply_update(gc.view(), self.center_cfg.alpha)?;
        }
        Ok(Some(joint))
    }

    /// One pass over `data` in a freshly shuffled order. `epoch` is 1-based
    /// and only used for error coordinates.
    pub fn train_epoch(&mut self, data: &LabeledDataset, epoch: usize) -> Result<EpochLosses> {
        let batches = batches_from(data.len(), self.sgd.batch_size, &mut self.batch_rng)?;
        let mut sums = (0.0, 0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let (x, y) = data.select(idx);
            let joint = self
                .step(x.view(), &y)?
                .ok_or(Error::NonFiniteLoss { epoch, batch: b })?;
            sums.0 += joint.value;
            sums.1 += joint.softmax_value;
            sums.2 += joint.aux_value;
        }
        self.epochs_completed += 1;
        let n = batches.len().max(1) as f64;
        Ok(EpochLosses {
            total: sums.0 / n,
            softmax: sums.1 / n,
            aux: sums.2 / n,
        })
    }
}

/// Deep features and logits for every row, computed in fixed-size chunks.
pub fn embed(
    params: &EncoderParams,
    inputs: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::shape(
            "encoder input width",
            params.input_dim(),
            inputs.ncols(),
        ));
    }
    if inputs.nrows() == 0 {
        return Ok((
            Array2::zeros((0, params.embed_dim())),
            Array2::zeros((0, params.num_classes())),
        ));
    }
    let mut feats = Vec::new();
    let mut logits = Vec::new();
    for chunk in inputs.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        let f = encoder_forward(params, chunk)?;
        feats.push(f.features);
        logits.push(f.logits);
    }
    let cat = |parts: &[Array2<f64>]| {
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        concatenate(Axis(0), &views).expect("chunks share a width")
    };
    Ok((cat(&feats), cat(&logits)))
}

pub fn evaluate(ck: &Checkpoint, dataset: &LabeledDataset) -> Result<EmbeddingReport> {
    if dataset.k != ck.centers.num_classes() {
        return Err(Error::shape(
            "dataset classes vs checkpoint",
            dataset.k,
            ck.centers.num_classes(),
        ));
    }
    let (features, logits) = embed(&ck.params, dataset.inputs_view())?;
    EmbeddingReport::compute(
        features.view(),
        logits.view(),
        &dataset.labels,
        ck.centers.view(),
    )
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    loss_mode: &'static str,
    lambda: f64,
    delta: f64,
    alpha: f64,
    softmax_reduction: &'static str,
    aux_reduction: &'static str,
    center_update: &'static str,
    pixel_normalization: &'static str,
    checkpoint_version: u32,
    train_samples: usize,
    test_samples: usize,
    train_class_counts: &'a [usize],
    test_class_counts: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<RunRecord>,
    pub output_dir: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Loads the configured data and trains; see [`train_on`].
pub fn train(cfg: &TrainConfig, on_epoch: impl FnMut(&RunRecord)) -> Result<TrainOutcome> {
    let splits = Splits::load(&cfg.dataset)?;
    train_on(cfg, &splits, on_epoch)
}

/// Trains on pre-loaded splits, writing the resolved config, run metadata,
/// metrics and timing streams, and a checkpoint after every epoch into
/// `cfg.output_dir`. On a non-finite loss the run stops and the checkpoint of
/// the last completed epoch is left in place.
pub fn train_on(
    cfg: &TrainConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&RunRecord),
) -> Result<TrainOutcome> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, ds) in [("train", &splits.train), ("test", &splits.test)] {
        if ds.input_dim() != cfg.layer_dims[0] || ds.k != cfg.dataset.num_classes() {
            return Err(Error::Config(format!(
                "{name} split is {} wide with {} classes, config expects {} and {}",
                ds.input_dim(),
                ds.k,
                cfg.layer_dims[0],
                cfg.dataset.num_classes()
            )));
        }
    }
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml_string()?).map_err(|e| Error::io(&config_path, e))?;
    let train_counts = splits.train.class_counts();
    let test_counts = splits.test.class_counts();
    let meta = RunMetadata {
        loss_mode: cfg.loss_mode.as_str(),
        lambda: cfg.effective_lambda(),
        delta: cfg.delta,
        alpha: cfg.alpha,
        softmax_reduction: "mean",
        aux_reduction: "sum",
        center_update: "after encoder step, from pre-step features",
        pixel_normalization: "divide by 255",
        checkpoint_version: checkpoint::VERSION,
        train_samples: splits.train.len(),
        test_samples: splits.test.len(),
        train_class_counts: &train_counts,
        test_class_counts: &test_counts,
    };
    let meta_path = out.join(METADATA_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;

    let metrics_path = out.join(METRICS_FILE);
    let timing_path = out.join(TIMING_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&timing_path)?;

    let mut session = Session::new(cfg)?;
    let mut records = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 1..=cfg.sgd.epochs {
        let started = Instant::now();
        let losses = session.train_epoch(&splits.train, epoch)?;
        let ck = session.checkpoint();
        let test = if epoch % cfg.eval_every == 0 || epoch == cfg.sgd.epochs {
            Some(evaluate(&ck, &splits.test)?)
        } else {
            None
        };
        ck.save(&ckpt_path)?;
        let record = RunRecord {
            epoch,
            train_loss: losses.total,
            train_softmax_loss: losses.softmax,
            train_aux_loss: losses.aux,
            test,
        };
        write_line(
            &mut metrics,
            &metrics_path,
            &serde_json::to_string(&record)?,
        )?;
        let t = EpochTiming {
            epoch,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        write_line(&mut timing, &timing_path, &serde_json::to_string(&t)?)?;
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: session.checkpoint(),
        records,
        output_dir: out.clone(),
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
