//! Fully-connected PReLU feature extractor.
//!
//! `layer_dims = [d_in, h_1, ..., embed_dim, k]`. Every layer but the last is
//! `PReLU(W h + b)`; the output of the last hidden layer is the deep feature
//! the center-based losses attach to, and a final linear layer maps it to
//! logits.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{check_finite, RngSeed, Stream};

pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Present on hidden layers only.
    pub slopes: Option<Array1<f64>>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
            slopes: self.slopes.as_ref().map(|s| Array1::zeros(s.len())),
        }
    }

    fn check_finite(&self, context: &'static str, layer: usize) -> Result<()> {
        check_finite(self.weight.view(), context).map_err(|_| non_finite(context, layer))?;
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(context, layer));
        }
        if let Some(s) = &self.slopes {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(non_finite(context, layer));
            }
        }
        Ok(())
    }
}

fn non_finite(context: &'static str, layer: usize) -> Error {
    Error::NonFinite {
        context,
        row: layer,
        col: 0,
    }
}

/// Encoder parameters. The generation counter advances on every in-place
/// update so tapes recorded before a step are rejected after it. Equality
/// compares values only.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    generation: u64,
}

impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl EncoderParams {
    /// He-style init: weights `N(0, 2/fan_in)`, zero biases, slopes 0.25.
    pub fn init(layer_dims: &[usize], seed: RngSeed) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = seed.rng(Stream::EncoderInit);
        let last = layer_dims.len() - 2;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    slopes: (l < last).then(|| Array1::from_elem(fan_out, DEFAULT_PRELU_SLOPE)),
                }
            })
            .collect();
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArgument(
                "encoder needs at least one hidden layer and a classifier".into(),
            ));
        }
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weight.dim();
            if out == 0 || inp == 0 || layer.bias.len() != out {
                return Err(Error::shape(
                    "layer weight vs bias",
                    layer.weight.dim(),
                    layer.bias.len(),
                ));
            }
            match (&layer.slopes, l == last) {
                (Some(s), false) if s.len() == out => {}
                (None, true) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {l}: PReLU slopes must be present on hidden layers only, sized to the output"
                    )))
                }
            }
            if l > 0 && layers[l - 1].weight.nrows() != inp {
                return Err(Error::shape(
                    "layer chaining",
                    layers[l - 1].weight.dim(),
                    layer.weight.dim(),
                ));
            }
            layer.check_finite("encoder parameters", l)?;
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weight.ncols())
            .chain(self.layers.iter().map(|l| l.weight.nrows()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.slopes.as_ref().map_or(0, |s| s.len()))
            .sum()
    }

    /// All parameters in a fixed order: per layer weight (row-major), bias, slopes.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(s) = &l.slopes {
                out.extend(s.iter());
            }
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::shape(
                "flat parameter vector",
                self.num_parameters(),
                flat.len(),
            ));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
            if let Some(s) = &mut l.slopes {
                s.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
        self.generation += 1;
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "layer_dims needs at least [input, embed, classes], got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer_dims must be positive, got {dims:?}"
        )));
    }
    if dims[dims.len() - 1] < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    Ok(())
}

/// Activations cached by [`encoder_forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    layer_dims: Vec<usize>,
    /// `inputs[l]` is the input to layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
}

impl Tape {
    pub(crate) fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// Deep features, `m × embed_dim`.
    pub features: Array2<f64>,
    /// `m × k`
    pub logits: Array2<f64>,
    pub tape: Tape,
}

fn affine(h: ArrayView2<'_, f64>, layer: &Layer) -> Array2<f64> {
    let mut z = h.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

fn prelu(z: &Array2<f64>, slopes: &Array1<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        Zip::from(&mut row).and(slopes).for_each(|v, &a| {
            if *v <= 0.0 {
                *v *= a;
            }
        });
    }
    out
}

pub fn encoder_forward(params: &EncoderParams, inputs: ArrayView2<'_, f64>) -> Result<Forward> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::shape(
            "encoder input width",
            params.input_dim(),
            inputs.ncols(),
        ));
    }
    let n_layers = params.layers.len();
    let mut tape_inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut h = inputs.to_owned();
    for layer in &params.layers[..n_layers - 1] {
        let z = affine(h.view(), layer);
        let next = prelu(&z, layer.slopes.as_ref().expect("hidden layer slopes"));
        tape_inputs.push(h);
        pre.push(z);
        h = next;
    }
    let logits = affine(h.view(), &params.layers[n_layers - 1]);
    tape_inputs.push(h.clone());
    Ok(Forward {
        features: h,
        logits,
        tape: Tape {
            generation: params.generation,
            layer_dims: params.layer_dims(),
            inputs: tape_inputs,
            pre,
        },
    })
}

/// Gradients for every layer plus the gradient w.r.t. the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub layers: Vec<Layer>,
    pub inputs: Array2<f64>,
}

impl EncoderGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(s) = &l.slopes {
                out.extend(s.iter());
            }
        }
        out
    }
}

/// Backpropagates the logit gradient and the deep-feature gradient together.
pub fn encoder_backward(
    params: &EncoderParams,
    tape: &Tape,
    grad_logits: ArrayView2<'_, f64>,
    grad_features: ArrayView2<'_, f64>,
) -> Result<EncoderGrads> {
    if tape.generation != params.generation || tape.layer_dims != params.layer_dims() {
        return Err(Error::StaleTape(format!(
            "tape generation {} for {:?}, encoder generation {} for {:?}",
            tape.generation,
            tape.layer_dims,
            params.generation,
            params.layer_dims()
        )));
    }
    let m = tape.inputs[0].nrows();
    if grad_logits.dim() != (m, params.num_classes()) {
        return Err(Error::shape(
            "grad_logits",
            (m, params.num_classes()),
            grad_logits.dim(),
        ));
    }
    if grad_features.dim() != (m, params.embed_dim()) {
        return Err(Error::shape(
            "grad_features",
            (m, params.embed_dim()),
            grad_features.dim(),
        ));
    }

    let n_layers = params.layers.len();
    let mut grads: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();

    // classifier
    let last = &params.layers[n_layers - 1];
    grads[n_layers - 1].weight = grad_logits.t().dot(&tape.inputs[n_layers - 1]);
    grads[n_layers - 1].bias = grad_logits.sum_axis(Axis(0));
    let mut gh = grad_logits.dot(&last.weight);
    gh += &grad_features;

    for l in (0..n_layers - 1).rev() {
        let layer = &params.layers[l];
        let slopes = layer.slopes.as_ref().expect("hidden layer slopes");
        let z = &tape.pre[l];
        let mut gz = gh;
        let mut g_slopes = Array1::<f64>::zeros(slopes.len());
        for (mut gz_row, z_row) in gz.outer_iter_mut().zip(z.outer_iter()) {
            Zip::from(&mut gz_row)
                .and(&z_row)
                .and(slopes)
                .and(&mut g_slopes)
                .for_each(|g, &zv, &a, gs| {
                    if zv <= 0.0 {
                        *gs += *g * zv;
                        *g *= a;
                    }
                });
        }
        grads[l].weight = gz.t().dot(&tape.inputs[l]);
        grads[l].bias = gz.sum_axis(Axis(0));
        grads[l].slopes = Some(g_slopes);
        gh = gz.dot(&layer.weight);
    }

    Ok(EncoderGrads {
        layers: grads,
        inputs: gh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("sgd: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        Ok(())
    }
}

/// Velocity buffers shaped like the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub layers: Vec<Layer>,
}

impl MomentumState {
    pub fn zeros(params: &EncoderParams) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        EncoderGrads {
            layers: self.layers.clone(),
            inputs: Array2::zeros((0, 0)),
        }
        .flatten()
    }
}

/// `v ← μ v + g + wd·p; p ← p − lr·v`, applied to weights, biases and slopes.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    cfg: &SgdConfig,
    state: &mut MomentumState,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() || state.layers.len() != params.layers.len() {
        return Err(Error::shape(
            "sgd layer count",
            params.layers.len(),
            grads.layers.len(),
        ));
    }
    for (l, (p, (g, v))) in params
        .layers
        .iter()
        .zip(grads.layers.iter().zip(&state.layers))
        .enumerate()
    {
        if p.weight.dim() != g.weight.dim() || p.weight.dim() != v.weight.dim() {
            return Err(Error::shape("sgd weight", p.weight.dim(), g.weight.dim()));
        }
        if p.bias.len() != g.bias.len() || p.bias.len() != v.bias.len() {
            return Err(Error::shape("sgd bias", p.bias.len(), g.bias.len()));
        }
        let slope_len = |o: &Option<Array1<f64>>| o.as_ref().map(Array1::len);
        if slope_len(&p.slopes) != slope_len(&g.slopes)
            || slope_len(&p.slopes) != slope_len(&v.slopes)
        {
            return Err(Error::shape(
                "sgd slopes",
                slope_len(&p.slopes),
                slope_len(&g.slopes),
            ));
        }
        g.check_finite("encoder gradient", l)?;
    }

    let step = |p: &mut f64, g: f64, v: &mut f64| {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= cfg.learning_rate * *v;
    };
    for (p, (g, v)) in params
        .layers
        .iter_mut()
        .zip(grads.layers.iter().zip(state.layers.iter_mut()))
    {
        Zip::from(&mut p.weight)
            .and(&g.weight)
            .and(&mut v.weight)
            .for_each(|p, &g, v| step(p, g, v));
        Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, v| step(p, g, v));
        if let (Some(ps), Some(gs), Some(vs)) = (&mut p.slopes, &g.slopes, &mut v.slopes) {
            Zip::from(ps)
                .and(gs)
                .and(vs)
                .for_each(|p, &g, v| step(p, g, v));
        }
    }
    params.generation += 1;
    Ok(())
}
