//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centers::{CenterUpdateConfig, InitScheme};
use crate::data::SyntheticSpec;
use crate::encoder::SgdConfig;
use crate::error::{Error, Result};
use crate::losses::ContrastiveCenterConfig;
use crate::numeric::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    SoftmaxOnly,
    Center,
    ContrastiveCenter,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::SoftmaxOnly => "softmax_only",
            LossMode::Center => "center",
            LossMode::ContrastiveCenter => "contrastive_center",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterInit {
    Gaussian,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first `train_limit` training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub k: usize,
    pub d: usize,
    pub n_per_class: usize,
    pub test_n_per_class: usize,
    pub mean_radius: f64,
    pub cluster_std: f64,
    pub seed: RngSeed,
}

impl SyntheticConfig {
    pub fn train_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            k: self.k,
            d: self.d,
            n_per_class: self.n_per_class,
            mean_radius: self.mean_radius,
            cluster_std: self.cluster_std,
            seed: self.seed,
        }
    }

    pub fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_per_class: self.test_n_per_class,
            ..self.train_spec()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist(MnistPaths),
    Synthetic(SyntheticConfig),
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::Mnist(_) => 10,
            DatasetConfig::Synthetic(s) => s.k,
        }
    }
}

fn default_lambda() -> f64 {
    ContrastiveCenterConfig::DEFAULT_LAMBDA
}

fn default_delta() -> f64 {
    ContrastiveCenterConfig::DEFAULT_DELTA
}

fn default_alpha() -> f64 {
    0.5
}

fn default_center_init() -> CenterInit {
    CenterInit::Gaussian
}

fn default_center_init_std() -> f64 {
    1.0
}

fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: RngSeed,
    pub loss_mode: LossMode,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_center_init")]
    pub center_init: CenterInit,
    #[serde(default = "default_center_init_std")]
    pub center_init_std: f64,
    pub layer_dims: Vec<usize>,
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub sgd: SgdConfig,
    pub dataset: DatasetConfig,
}

impl TrainConfig {
    /// Parses a config; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        if cfg.loss_mode == LossMode::SoftmaxOnly {
            cfg.lambda = 0.0;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetConfig::Mnist(m) = &mut self.dataset {
            fix(&mut m.train_images);
            fix(&mut m.train_labels);
            fix(&mut m.test_images);
            fix(&mut m.test_labels);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.loss_config()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.center_config()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sgd
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.layer_dims.len() < 3 || self.layer_dims.contains(&0) {
            return bad(format!(
                "layer_dims must be [input, ..., embed, classes], got {:?}",
                self.layer_dims
            ));
        }
        let k = self.dataset.num_classes();
        if *self.layer_dims.last().unwrap() != k {
            return bad(format!(
                "layer_dims ends in {} but the dataset has {k} classes",
                self.layer_dims.last().unwrap()
            ));
        }
        match &self.dataset {
            DatasetConfig::Mnist(m) => {
                if self.layer_dims[0] != 784 {
                    return bad(format!(
                        "MNIST inputs are 784 wide, layer_dims starts with {}",
                        self.layer_dims[0]
                    ));
                }
                for p in [
                    &m.train_images,
                    &m.train_labels,
                    &m.test_images,
                    &m.test_labels,
                ] {
                    if !p.exists() {
                        return bad(format!("dataset file {} does not exist", p.display()));
                    }
                }
            }
            DatasetConfig::Synthetic(s) => {
                s.train_spec()
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                if s.test_n_per_class == 0 {
                    return bad("test_n_per_class must be at least 1".into());
                }
                if self.layer_dims[0] != s.d {
                    return bad(format!(
                        "synthetic inputs are {} wide, layer_dims starts with {}",
                        s.d, self.layer_dims[0]
                    ));
                }
            }
        }
        Ok(())
    }

    /// λ as used by the run: 0 in softmax-only mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.loss_mode {
            LossMode::SoftmaxOnly => 0.0,
            _ => self.lambda,
        }
    }

    pub fn loss_config(&self) -> Result<ContrastiveCenterConfig> {
        ContrastiveCenterConfig::new(self.delta, self.effective_lambda())
    }

    pub fn center_config(&self) -> Result<CenterUpdateConfig> {
        let init = match self.center_init {
            CenterInit::Gaussian => InitScheme::Gaussian {
                std: self.center_init_std,
            },
            CenterInit::Zeros => InitScheme::Zeros,
        };
        CenterUpdateConfig::new(self.alpha, init)
    }

    pub fn embed_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }
}
