//! The learnable class-center bank.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{RngSeed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Gaussian { std: f64 },
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterUpdateConfig {
    /// Center learning rate, in `(0, 1]`.
    pub alpha: f64,
    pub init: InitScheme,
}

impl CenterUpdateConfig {
    pub fn new(alpha: f64, init: InitScheme) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "center learning rate alpha must lie in (0, 1], got {alpha}"
            )));
        }
        if let InitScheme::Gaussian { std } = init {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "center init std must be positive, got {std}"
                )));
            }
        }
        Ok(Self { alpha, init })
    }
}

impl Default for CenterUpdateConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            init: InitScheme::Gaussian { std: 1.0 },
        }
    }
}

/// `k × d` matrix of class centers, `k ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    centers: Array2<f64>,
}

impl CenterBank {
    pub fn from_array(centers: Array2<f64>) -> Result<Self> {
        let (k, d) = centers.dim();
        if k < 2 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "center bank needs k >= 2 and d >= 1, got {k}x{d}"
            )));
        }
        crate::numeric::check_finite(centers.view(), "center bank")?;
        Ok(Self { centers })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.centers
    }

    /// `centers ← centers − α · grad`. The bank is left untouched if `grad`
    /// is rejected.
    pub fn apply_update(&mut self, grad: ArrayView2<'_, f64>, alpha: f64) -> Result<()> {
        if grad.dim() != self.centers.dim() {
            return Err(Error::shape(
                "center update",
                self.centers.dim(),
                grad.dim(),
            ));
        }
        crate::numeric::check_finite(grad, "center gradient")?;
        self.centers.scaled_add(-alpha, &grad);
        Ok(())
    }
}

pub fn init_centers(
    k: usize,
    d: usize,
    cfg: &CenterUpdateConfig,
    seed: RngSeed,
) -> Result<CenterBank> {
    if k < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "center bank needs k >= 2 and d >= 1, got k={k}, d={d}"
        )));
    }
    let centers = match cfg.init {
        InitScheme::Zeros => Array2::zeros((k, d)),
        InitScheme::Gaussian { std } => {
            let mut rng = seed.rng(Stream::CenterInit);
            Array2::from_shape_simple_fn((k, d), || {
                std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        }
    };
    CenterBank::from_array(centers)
}

pub fn update_centers(
    mut bank: CenterBank,
    grad: ArrayView2<'_, f64>,
    cfg: &CenterUpdateConfig,
) -> Result<CenterBank> {
    bank.apply_update(grad, cfg.alpha)?;
    Ok(bank)
}
