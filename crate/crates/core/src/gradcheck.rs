//! Central finite-difference verification of every analytic gradient in the
//! crate: the loss gradients and the full encoder + center-bank backward pass.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::centers::CenterBank;
use crate::encoder::{encoder_backward, encoder_forward, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{
    center_loss, contrastive_center_forward, contrastive_center_loss, softmax_cross_entropy,
    ContrastiveCenterConfig,
};
use crate::numeric::{FeatureBatch, LabelBatch, RngSeed, Stream};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR·max(1, |f|))`.
/// Central differences carry absolute rounding noise of order `ε|f|/STEP`, so
/// tiny gradient entries of a large loss cannot be resolved more finely.
pub const FLOOR: f64 = 1e-4;
/// Inputs whose hidden pre-activations fall this close to the PReLU kink are
/// redrawn, since finite differences straddling the kink are meaningless.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest error, e.g. `centers[2,0]`.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// Compares `analytic` against central differences of `f` around `x0`.
/// `coord` names a flat index for the report.
pub fn check_gradient(
    name: &str,
    analytic: &[f64],
    x0: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    coord: impl Fn(usize) -> String,
) -> CheckResult {
    assert_eq!(analytic.len(), x0.len(), "{name}: gradient length");
    let mut x = x0.to_vec();
    let loss = f(&x);
    let mut worst = (0.0, 0usize, 0.0, 0.0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(&x);
        x[i] = orig - STEP;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[i], numeric, loss);
        // NaN compares false; treat it as the worst possible error
        if err.is_nan() || err > worst.0 {
            worst = (
                if err.is_nan() { f64::INFINITY } else { err },
                i,
                analytic[i],
                numeric,
            );
        }
    }
    CheckResult {
        name: name.to_string(),
        coordinates: x.len(),
        max_rel_err: worst.0,
        worst: coord(worst.1),
        analytic: worst.2,
        numeric: worst.3,
    }
}

fn matrix_coord(name: &'static str, cols: usize) -> impl Fn(usize) -> String {
    move |i| format!("{name}[{},{}]", i / cols, i % cols)
}

fn reshape(flat: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), flat.to_vec()).expect("flat length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sizes {
    pub m: usize,
    pub k: usize,
    pub d: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self { m: 8, k: 5, d: 4 }
    }
}

impl Sizes {
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.m) || !(2..=10).contains(&self.k) || !(1..=16).contains(&self.d)
        {
            return Err(Error::InvalidArgument(format!(
                "gradcheck sizes must satisfy 1<=m<=32, 2<=k<=10, 1<=d<=16; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A random loss instance whose sample-to-own-center distances are
/// log-uniform in `[0.1, 10]`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub features: FeatureBatch,
    pub labels: LabelBatch,
    pub centers: CenterBank,
}

pub fn random_instance(seed: RngSeed, sizes: Sizes) -> Result<Instance> {
    sizes.validate()?;
    let Sizes { m, k, d } = sizes;
    let mut rng = seed.rng(Stream::Scratch);
    let centers = Array2::from_shape_simple_fn((k, d), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        3.0 * v
    });
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut x = Array2::zeros((m, d));
    for (i, &y) in labels.iter().enumerate() {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let radius = 10f64.powf(rng.random_range(-1.0..1.0));
        for t in 0..d {
            x[[i, t]] = centers[[y, t]] + radius * dir[t] / norm;
        }
    }
    Ok(Instance {
        features: FeatureBatch::new(x)?,
        labels: LabelBatch::new(labels, k)?,
        centers: CenterBank::from_array(centers)?,
    })
}

pub fn check_contrastive_features(
    inst: &Instance,
    cfg: &ContrastiveCenterConfig,
) -> Result<CheckResult> {
    let out = contrastive_center_loss(&inst.features, &inst.labels, &inst.centers, cfg)?;
    check_contrastive_features_against(
        inst,
        cfg,
        out.grad_features.as_slice().expect("standard layout"),
    )
}

/// Same as [`check_contrastive_features`] but with a caller-supplied analytic
/// gradient; used to confirm a corrupted gradient is caught.
pub fn check_contrastive_features_against(
    inst: &Instance,
    cfg: &ContrastiveCenterConfig,
    analytic: &[f64],
) -> Result<CheckResult> {
    let (m, d) = (inst.features.rows(), inst.features.dim());
    let x0: Vec<f64> = inst.features.view().iter().copied().collect();
    Ok(check_gradient(
        "contrastive_center d/dfeatures",
        analytic,
        &x0,
        |x| {
            let fb = FeatureBatch::new(reshape(x, m, d)).expect("finite");
            contrastive_center_forward(&fb, &inst.labels, &inst.centers, cfg)
                .expect("valid instance")
        },
        matrix_coord("features", d),
    ))
}

pub fn check_contrastive_centers(
    inst: &Instance,
    cfg: &ContrastiveCenterConfig,
) -> Result<CheckResult> {
    let out = contrastive_center_loss(&inst.features, &inst.labels, &inst.centers, cfg)?;
    let (k, d) = (inst.centers.num_classes(), inst.centers.dim());
    let c0: Vec<f64> = inst.centers.view().iter().copied().collect();
    Ok(check_gradient(
        "contrastive_center d/dcenters",
        out.grad_centers
            .as_ref()
            .expect("center gradient")
            .as_slice()
            .expect("standard layout"),
        &c0,
        |c| {
            let bank = CenterBank::from_array(reshape(c, k, d)).expect("finite");
            contrastive_center_forward(&inst.features, &inst.labels, &bank, cfg)
                .expect("valid instance")
        },
        matrix_coord("centers", d),
    ))
}

pub fn check_center_loss_features(inst: &Instance) -> Result<CheckResult> {
    let out = center_loss(&inst.features, &inst.labels, &inst.centers)?;
    let (m, d) = (inst.features.rows(), inst.features.dim());
    let x0: Vec<f64> = inst.features.view().iter().copied().collect();
    Ok(check_gradient(
        "center_loss d/dfeatures",
        out.grad_features.as_slice().expect("standard layout"),
        &x0,
        |x| {
            let fb = FeatureBatch::new(reshape(x, m, d)).expect("finite");
            center_loss(&fb, &inst.labels, &inst.centers)
                .expect("valid instance")
                .value
        },
        matrix_coord("features", d),
    ))
}

pub fn check_softmax(seed: RngSeed, m: usize, k: usize) -> Result<CheckResult> {
    let mut rng = seed.rng(Stream::Scratch);
    let logits = Array2::from_shape_simple_fn((m, k), || rng.random_range(-3.0..3.0));
    let labels = LabelBatch::new((0..m).map(|_| rng.random_range(0..k)).collect(), k)?;
    let out = softmax_cross_entropy(logits.view(), &labels)?;
    let z0: Vec<f64> = logits.iter().copied().collect();
    Ok(check_gradient(
        "softmax_cross_entropy d/dlogits",
        out.grad_features.as_slice().expect("standard layout"),
        &z0,
        |z| {
            softmax_cross_entropy(reshape(z, m, k).view(), &labels)
                .expect("valid")
                .value
        },
        matrix_coord("logits", k),
    ))
}

/// Joint objective `softmax(logits) + λ·contrastive(features, centers)` through
/// a small encoder, checked w.r.t. every encoder parameter, every input and
/// every center.
pub fn check_network(
    seed: RngSeed,
    layer_dims: &[usize],
    m: usize,
    cfg: &ContrastiveCenterConfig,
) -> Result<Vec<CheckResult>> {
    let params = EncoderParams::init(layer_dims, seed)?;
    // non-default slopes and biases so every parameter path is exercised
    let mut rng = seed.rng(Stream::Scratch);
    let mut flat = params.flatten();
    for v in flat.iter_mut() {
        *v += 0.1 * rng.random_range(-1.0..1.0);
    }
    let mut params = params;
    params.set_flat(&flat)?;
    let k = params.num_classes();
    let e = params.embed_dim();
    let d_in = params.input_dim();
    let mut inputs = Array2::zeros((m, d_in));
    for mut row in inputs.outer_iter_mut() {
        for _attempt in 0..1000 {
            row.mapv_inplace(|_| rng.random_range(-1.5..1.5));
            let probe = encoder_forward(&params, row.view().insert_axis(ndarray::Axis(0)))?;
            if probe
                .tape
                .pre_activations()
                .iter()
                .flatten()
                .all(|z| z.abs() > KINK_MARGIN)
            {
                break;
            }
        }
    }
    let labels = LabelBatch::new((0..m).map(|i| i % k).collect(), k)?;
    let centers = CenterBank::from_array(Array2::from_shape_simple_fn((k, e), || {
        rng.random_range(-2.0..2.0)
    }))?;

    let total = |p: &EncoderParams, x: &Array2<f64>, c: &CenterBank| -> f64 {
        let f = encoder_forward(p, x.view()).expect("forward");
        let ls = softmax_cross_entropy(f.logits.view(), &labels)
            .expect("softmax")
            .value;
        let fb = FeatureBatch::new(f.features).expect("finite");
        ls + cfg.lambda * contrastive_center_forward(&fb, &labels, c, cfg).expect("contrastive")
    };

    let fwd = encoder_forward(&params, inputs.view())?;
    let softmax = softmax_cross_entropy(fwd.logits.view(), &labels)?;
    let features = FeatureBatch::new(fwd.features.clone())?;
    let aux = contrastive_center_loss(&features, &labels, &centers, cfg)?;
    let grads = encoder_backward(
        &params,
        &fwd.tape,
        softmax.grad_features.view(),
        (&aux.grad_features * cfg.lambda).view(),
    )?;

    let p0 = params.flatten();
    let by_param = check_gradient(
        "joint loss d/dencoder-parameters",
        &grads.flatten(),
        &p0,
        |p| {
            let mut q = params.clone();
            q.set_flat(p).expect("same length");
            total(&q, &inputs, &centers)
        },
        |i| format!("param[{i}]"),
    );
    let x0: Vec<f64> = inputs.iter().copied().collect();
    let by_input = check_gradient(
        "joint loss d/dinputs",
        grads.inputs.as_slice().expect("standard layout"),
        &x0,
        |x| total(&params, &reshape(x, m, d_in), &centers),
        matrix_coord("inputs", d_in),
    );
    let c0: Vec<f64> = centers.view().iter().copied().collect();
    let center_grad = aux.grad_centers.expect("center gradient") * cfg.lambda;
    let by_center = check_gradient(
        "joint loss d/dcenters",
        center_grad.as_slice().expect("standard layout"),
        &c0,
        |c| {
            total(
                &params,
                &inputs,
                &CenterBank::from_array(reshape(c, k, e)).expect("finite"),
            )
        },
        matrix_coord("centers", e),
    );
    Ok(vec![by_param, by_input, by_center])
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: RngSeed,
    pub sizes: Sizes,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn worst(&self) -> Option<&CheckResult> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Runs every suite at the given sizes. The encoder suite uses a
/// `4 → 3 → d → k` network on `m` samples.
pub fn gradcheck(seed: RngSeed, sizes: Sizes) -> Result<GradcheckReport> {
    sizes.validate()?;
    let cfg = ContrastiveCenterConfig::new(1.0, 0.5)?;
    let inst = random_instance(seed, sizes)?;
    let mut checks = vec![
        check_contrastive_features(&inst, &cfg)?,
        check_contrastive_centers(&inst, &cfg)?,
        check_center_loss_features(&inst)?,
        check_softmax(seed, sizes.m, sizes.k)?,
    ];
    checks.extend(check_network(
        seed,
        &[4, 3, sizes.d, sizes.k],
        sizes.m,
        &cfg,
    )?);
    Ok(GradcheckReport {
        seed,
        sizes,
        step: STEP,
        tolerance: TOLERANCE,
        checks,
    })
}
