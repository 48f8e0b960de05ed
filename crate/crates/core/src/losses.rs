//! Forward values and exact analytic gradients for softmax cross-entropy, the
//! center loss, the contrastive-center loss, and their joint objective
//! `L = L_s + λ·L_aux`.
//!
//! Reductions: softmax cross-entropy is averaged over the batch, the center
//! and contrastive-center losses are summed over it. `λ` absorbs the scale
//! difference.
//!
//! For the contrastive-center loss, with `a_i = ‖x_i − c_{y_i}‖²` and
//! `D_i = Σ_{j≠y_i} ‖x_i − c_j‖² + δ`:
//!
//! ```text
//! L        = ½ Σ_i a_i / D_i
//! ∂L/∂x_i  = (x_i − c_{y_i}) / D_i − a_i Σ_{j≠y_i} (x_i − c_j) / D_i²
//! ∂L/∂c_n  = Σ_{i: y_i = n} (c_n − x_i) / D_i + Σ_{i: y_i ≠ n} (x_i − c_n) a_i / D_i²
//! ```
//!
//! The halving in `L` cancels the 2 from differentiating the squares, so the
//! gradients above are the exact derivatives of the value this module returns.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::centers::CenterBank;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp_unchecked, pairwise_sq_dist, FeatureBatch, LabelBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveCenterConfig {
    /// Denominator guard, `> 0`.
    pub delta: f64,
    /// Auxiliary-loss weight in the joint objective, `≥ 0`.
    pub lambda: f64,
}

impl ContrastiveCenterConfig {
    pub const DEFAULT_DELTA: f64 = 1.0;
    pub const DEFAULT_LAMBDA: f64 = 0.1;

    pub fn new(delta: f64, lambda: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta must be > 0, got {delta}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        Ok(Self { delta, lambda })
    }
}

impl Default for ContrastiveCenterConfig {
    fn default() -> Self {
        Self {
            delta: Self::DEFAULT_DELTA,
            lambda: Self::DEFAULT_LAMBDA,
        }
    }
}

/// A loss value with its gradients. For softmax cross-entropy the "features"
/// are the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_features: Array2<f64>,
    pub grad_centers: Option<Array2<f64>>,
}

fn check_batch(features: &FeatureBatch, labels: &LabelBatch, centers: &CenterBank) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "features vs labels",
            features.rows(),
            labels.len(),
        ));
    }
    if features.dim() != centers.dim() {
        return Err(Error::shape(
            "features vs centers",
            (features.rows(), features.dim()),
            (centers.num_classes(), centers.dim()),
        ));
    }
    if labels.num_classes() != centers.num_classes() {
        return Err(Error::shape(
            "label classes vs centers",
            labels.num_classes(),
            centers.num_classes(),
        ));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch; the gradient is w.r.t. the logits.
pub fn softmax_cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &LabelBatch,
) -> Result<LossOutput> {
    let (m, k) = logits.dim();
    if m != labels.len() || m == 0 {
        return Err(Error::shape("logits vs labels", logits.dim(), labels.len()));
    }
    if k != labels.num_classes() {
        return Err(Error::shape(
            "logit columns vs classes",
            k,
            labels.num_classes(),
        ));
    }
    crate::numeric::check_finite(logits, "logits")?;
    let scale = 1.0 / m as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((m, k));
    for ((row, &y), mut g) in logits
        .outer_iter()
        .zip(labels.as_slice())
        .zip(grad.outer_iter_mut())
    {
        let lse = log_sum_exp_unchecked(row.iter().copied());
        value += lse - row[y];
        for (gj, &z) in g.iter_mut().zip(row.iter()) {
            *gj = (z - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok(LossOutput {
        value: value * scale,
        grad_features: grad,
        grad_centers: None,
    })
}

/// Center loss, summed over the batch. The center "gradient" is the
/// count-normalized update direction `Σ_{i: y_i=j} (c_j − x_i) / (1 + n_j)`,
/// not the raw derivative.
pub fn center_loss(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
) -> Result<LossOutput> {
    check_batch(features, labels, centers)?;
    let x = features.view();
    let c = centers.view();
    let mut grad_features = Array2::zeros(x.dim());
    let mut grad_centers = Array2::zeros(c.dim());
    let mut counts = vec![0usize; centers.num_classes()];
    let mut value = 0.0;
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let diff = &x.row(i) - &c.row(y);
        value += diff.dot(&diff);
        grad_features.row_mut(i).assign(&diff);
        let mut gc = grad_centers.row_mut(y);
        gc -= &diff;
        counts[y] += 1;
    }
    for (mut row, &n) in grad_centers.outer_iter_mut().zip(&counts) {
        row /= 1.0 + n as f64;
    }
    Ok(LossOutput {
        value: 0.5 * value,
        grad_features,
        grad_centers: Some(grad_centers),
    })
}

/// Per-sample own-center distance `a_i` and guarded denominator `D_i`.
struct ContrastiveTerms {
    own: Array1<f64>,
    denom: Array1<f64>,
}

fn contrastive_terms(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    cfg: &ContrastiveCenterConfig,
) -> Result<ContrastiveTerms> {
    check_batch(features, labels, centers)?;
    if centers.num_classes() < 2 {
        return Err(Error::InvalidArgument(
            "contrastive-center loss needs at least 2 classes".into(),
        ));
    }
    if cfg.delta.is_nan() || cfg.delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be > 0, got {}",
            cfg.delta
        )));
    }
    let dist = pairwise_sq_dist(features.view(), centers.view())?;
    let m = features.rows();
    let mut own = Array1::zeros(m);
    let mut denom = Array1::zeros(m);
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let row = dist.row(i);
        own[i] = row[y];
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, d)| d)
            .sum();
        denom[i] = others + cfg.delta;
    }
    Ok(ContrastiveTerms { own, denom })
}

pub fn contrastive_center_forward(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    cfg: &ContrastiveCenterConfig,
) -> Result<f64> {
    let t = contrastive_terms(features, labels, centers, cfg)?;
    Ok(forward_from_terms(&t))
}

fn forward_from_terms(t: &ContrastiveTerms) -> f64 {
    0.5 * t
        .own
        .iter()
        .zip(t.denom.iter())
        .map(|(a, d)| a / d)
        .sum::<f64>()
}

pub fn contrastive_center_grad_features(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    cfg: &ContrastiveCenterConfig,
) -> Result<Array2<f64>> {
    let t = contrastive_terms(features, labels, centers, cfg)?;
    Ok(grad_features_from_terms(features, labels, centers, &t))
}

fn grad_features_from_terms(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    t: &ContrastiveTerms,
) -> Array2<f64> {
    let x = features.view();
    let c = centers.view();
    let mut grad = Array2::zeros(x.dim());
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let xi = x.row(i);
        let d = t.denom[i];
        let ratio = t.own[i] / (d * d);
        let mut g = grad.row_mut(i);
        for (j, cj) in c.outer_iter().enumerate() {
            if j == y {
                g.zip_mut_with(&(&xi - &cj), |gv, &diff| *gv += diff / d);
            } else {
                g.zip_mut_with(&(&xi - &cj), |gv, &diff| *gv -= ratio * diff);
            }
        }
    }
    grad
}

pub fn contrastive_center_grad_centers(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    cfg: &ContrastiveCenterConfig,
) -> Result<Array2<f64>> {
    let t = contrastive_terms(features, labels, centers, cfg)?;
    Ok(grad_centers_from_terms(features, labels, centers, &t))
}

fn grad_centers_from_terms(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    t: &ContrastiveTerms,
) -> Array2<f64> {
    let x = features.view();
    let c = centers.view();
    let mut grad = Array2::zeros(c.dim());
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let xi = x.row(i);
        let d = t.denom[i];
        let ratio = t.own[i] / (d * d);
        for (n, (cn, mut g)) in c.outer_iter().zip(grad.outer_iter_mut()).enumerate() {
            if n == y {
                g.zip_mut_with(&(&cn - &xi), |gv, &diff| *gv += diff / d);
            } else {
                g.zip_mut_with(&(&xi - &cn), |gv, &diff| *gv += ratio * diff);
            }
        }
    }
    grad
}

/// Value and both gradients of the contrastive-center loss in one pass.
pub fn contrastive_center_loss(
    features: &FeatureBatch,
    labels: &LabelBatch,
    centers: &CenterBank,
    cfg: &ContrastiveCenterConfig,
) -> Result<LossOutput> {
    let t = contrastive_terms(features, labels, centers, cfg)?;
    Ok(LossOutput {
        value: forward_from_terms(&t),
        grad_features: grad_features_from_terms(features, labels, centers, &t),
        grad_centers: Some(grad_centers_from_terms(features, labels, centers, &t)),
    })
}

/// The joint objective. Softmax gradients stay attached to the logits and the
/// auxiliary gradients to the deep features; both are backpropagated through
/// the encoder by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub value: f64,
    pub softmax_value: f64,
    pub aux_value: f64,
    pub grad_logits: Array2<f64>,
    /// `λ · ∂L_aux/∂x`, zero when there is no auxiliary loss.
    pub grad_features: Array2<f64>,
    /// `λ · ∂L_aux/∂c`, if the auxiliary loss produces center gradients.
    pub grad_centers: Option<Array2<f64>>,
}

/// `value = L_s + λ·L_aux`; `λ` scales both auxiliary gradient streams.
///
/// `feature_dim` sizes the zero feature gradient when `aux` is `None`.
pub fn joint_loss(
    softmax: &LossOutput,
    aux: Option<&LossOutput>,
    feature_dim: usize,
    cfg: &ContrastiveCenterConfig,
) -> Result<JointLoss> {
    let m = softmax.grad_features.nrows();
    let Some(aux) = aux else {
        return Ok(JointLoss {
            value: softmax.value,
            softmax_value: softmax.value,
            aux_value: 0.0,
            grad_logits: softmax.grad_features.clone(),
            grad_features: Array2::zeros((m, feature_dim)),
            grad_centers: None,
        });
    };
    if aux.grad_features.dim() != (m, feature_dim) {
        return Err(Error::shape(
            "joint loss feature gradient",
            (m, feature_dim),
            aux.grad_features.dim(),
        ));
    }
    let lambda = cfg.lambda;
    Ok(JointLoss {
        value: softmax.value + lambda * aux.value,
        softmax_value: softmax.value,
        aux_value: aux.value,
        grad_logits: softmax.grad_features.clone(),
        grad_features: &aux.grad_features * lambda,
        grad_centers: aux.grad_centers.as_ref().map(|g| g * lambda),
    })
}
