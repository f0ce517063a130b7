// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{ParamVector, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` stored `[outputs, inputs]`
/// row-major, followed by `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Track running pre-activation moments for this layer.
    pub track_stats: bool,
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Architecture of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    num_params: usize,
    hash: u64,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::dims(pair[0].outputs, pair[1].inputs));
            }
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if layers.last().map_or(0, |l| l.outputs) < 2 {
            return Err(Error::Config("output dimension must be at least 2".into()));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.num_params();
        }
        let hash = layout_hash(&layers);
        Ok(Self {
            layers,
            offsets,
            num_params: total,
            hash,
        })
    }

    /// Classifier MLP over `dims = [input, hidden..., classes]`. Hidden layers
    /// use `hidden` and are flagged for feature statistics; the output layer
    /// is linear.
    pub fn classifier(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "classifier needs input and output dims".into(),
            ));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    hidden
                },
                track_stats: i != last,
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Indices of layers that carry feature statistics.
    pub fn tracked_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.track_stats)
            .map(|(i, _)| i)
    }

    /// Replaces the feature-statistics flags; `flags[i]` applies to layer `i`.
    pub fn with_tracked(&self, flags: &[bool]) -> Result<Self> {
        if flags.len() != self.layers.len() {
            return Err(Error::dims(self.layers.len(), flags.len()));
        }
        let layers = self
            .layers
            .iter()
            .zip(flags)
            .map(|(l, &f)| LayerSpec {
                track_stats: f,
                ..*l
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::from_raw(vec![0.0; self.num_params], self.hash)
    }

    pub fn params_from(&self, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != self.num_params {
            return Err(Error::dims(self.num_params, values.len()));
        }
        Ok(ParamVector::from_raw(values, self.hash))
    }

    /// Uniform fan-in initialization (`±1/sqrt(inputs)`), biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params);
        for layer in &self.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            values.extend((0..layer.inputs * layer.outputs).map(|_| dist.sample(rng)));
            values.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        ParamVector::from_raw(values, self.hash)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.spec_hash() != self.hash || params.len() != self.num_params {
            return Err(Error::Binding {
                left: self.hash,
                right: params.spec_hash(),
            });
        }
        Ok(())
    }

    fn weights<'a>(&self, params: &'a [f64], layer: usize) -> (&'a [f64], &'a [f64]) {
        let l = &self.layers[layer];
        let start = self.offsets[layer];
        let split = start + l.inputs * l.outputs;
        (&params[start..split], &params[split..split + l.outputs])
    }
}

// FNV-1a over the layer layout; stable across platforms and toolchains.
fn layout_hash(layers: &[LayerSpec]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for l in layers {
        feed(&(l.inputs as u64).to_le_bytes());
        feed(&(l.outputs as u64).to_le_bytes());
        feed(&[l.activation.tag()]);
    }
    h
}

/// Per-unit mean and (biased) variance of one layer's pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LayerMoments {
    fn of(layer: usize, pre: &[f64], batch: usize, width: usize) -> Self {
        let n = batch as f64;
        let mut mean = vec![0.0; width];
        for row in pre.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in pre.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        Self { layer, mean, var }
    }
}

/// Exponential moving averages of pre-activation moments for every tracked
/// layer, playing the role of batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub layers: Vec<LayerMoments>,
    pub updates: u64,
    pub decay: f64,
}

impl FeatureStats {
    pub const DEFAULT_DECAY: f64 = 0.9;

    pub fn new(spec: &ModelSpec) -> Self {
        let layers = spec
            .tracked_layers()
            .map(|i| {
                let w = spec.layers[i].outputs;
                LayerMoments {
                    layer: i,
                    mean: vec![0.0; w],
                    var: vec![1.0; w],
                }
            })
            .collect();
        Self {
            layers,
            updates: 0,
            decay: Self::DEFAULT_DECAY,
        }
    }

    /// Folds one batch of moments in. The first batch seeds the averages.
    pub fn absorb(&mut self, batch: &[LayerMoments]) -> Result<()> {
        if batch.len() != self.layers.len() {
            return Err(Error::dims(self.layers.len(), batch.len()));
        }
        let (keep, take) = if self.updates == 0 {
            (0.0, 1.0)
        } else {
            (self.decay, 1.0 - self.decay)
        };
        for (run, new) in self.layers.iter_mut().zip(batch) {
            if run.layer != new.layer || run.mean.len() != new.mean.len() {
                return Err(Error::dims(run.layer, new.layer));
            }
            for (r, b) in run.mean.iter_mut().zip(&new.mean) {
                *r = keep * *r + take * b;
            }
            for (r, b) in run.var.iter_mut().zip(&new.var) {
                *r = keep * *r + take * b;
            }
        }
        self.updates += 1;
        Ok(())
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }

    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    pub fn output_tensor(&self) -> Tensor {
        let width = self.output().len() / self.batch.max(1);
        Tensor::matrix(self.batch, width, self.output().to_vec()).expect("consistent trace")
    }

    /// Moments of every tracked layer for this batch.
    pub fn moments(&self, spec: &ModelSpec) -> Vec<LayerMoments> {
        spec.tracked_layers()
            .map(|i| LayerMoments::of(i, &self.pre[i], self.batch, spec.layers[i].outputs))
            .collect()
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    /// Batch-local moments of tracked layers.
    pub batch_stats: Vec<LayerMoments>,
}

fn check_batch(spec: &ModelSpec, batch: &Tensor) -> Result<()> {
    if batch.shape().len() != 2 || batch.cols() != spec.input_dim() {
        return Err(Error::dims(
            format!("[batch, {}]", spec.input_dim()),
            format!("{:?}", batch.shape()),
        ));
    }
    Ok(())
}

/// Runs the network and keeps intermediate values for [`backward`].
pub fn forward_trace(spec: &ModelSpec, params: &ParamVector, batch: &Tensor) -> Result<Trace> {
    spec.check_params(params)?;
    check_batch(spec, batch)?;
    let n = batch.rows();
    let mut activations = Vec::with_capacity(spec.layers.len() + 1);
    let mut pre = Vec::with_capacity(spec.layers.len());
    activations.push(batch.values().to_vec());
    for (li, layer) in spec.layers.iter().enumerate() {
        let (w, b) = spec.weights(params.values(), li);
        let input = &activations[li];
        let mut z = vec![0.0; n * layer.outputs];
        for (x, zrow) in input
            .chunks_exact(layer.inputs)
            .zip(z.chunks_exact_mut(layer.outputs))
        {
            for ((zo, wrow), bo) in zrow.iter_mut().zip(w.chunks_exact(layer.inputs)).zip(b) {
                let mut acc = *bo;
                for (wi, xi) in wrow.iter().zip(x) {
                    acc += wi * xi;
                }
                *zo = acc;
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInstability { layer: li });
        }
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(z);
        activations.push(a);
    }
    Ok(Trace {
        batch: n,
        activations,
        pre,
    })
}

/// Computes logits for `batch`. When `stats` is given, the running feature
/// statistics are updated with this batch's moments.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    stats: Option<&mut FeatureStats>,
) -> Result<ForwardOutput> {
    let trace = forward_trace(spec, params, batch)?;
    let batch_stats = trace.moments(spec);
    if let Some(stats) = stats {
        stats.absorb(&batch_stats)?;
    }
    Ok(ForwardOutput {
        logits: trace.output_tensor(),
        batch_stats,
    })
}

/// Gradients produced by [`backward`].
pub struct Gradients {
    pub params: ParamVector,
    pub input: Vec<f64>,
}

/// Reverse-mode pass. `d_output` is the loss gradient w.r.t. the network
/// output (after the last activation). `pre_grads` optionally injects extra
/// gradients on the pre-activations of individual layers, indexed by layer.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    trace: &Trace,
    d_output: &[f64],
    pre_grads: &[(usize, Vec<f64>)],
) -> Result<Gradients> {
    spec.check_params(params)?;
    if d_output.len() != trace.output().len() {
        return Err(Error::dims(trace.output().len(), d_output.len()));
    }
    let n = trace.batch;
    let mut grad = vec![0.0; spec.num_params];
    let mut upstream = d_output.to_vec();
    for li in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[li];
        let z = &trace.pre[li];
        let y = &trace.activations[li + 1];
        let mut dz: Vec<f64> = upstream
            .iter()
            .zip(z.iter().zip(y))
            .map(|(g, (&zv, &yv))| g * layer.activation.derivative(zv, yv))
            .collect();
        for (_, extra) in pre_grads.iter().filter(|(l, _)| *l == li) {
            if extra.len() != dz.len() {
                return Err(Error::dims(dz.len(), extra.len()));
            }
            for (d, e) in dz.iter_mut().zip(extra) {
                *d += e;
            }
        }
        let x = &trace.activations[li];
        let (w, _) = spec.weights(params.values(), li);
        let start = spec.offsets[li];
        let split = start + layer.inputs * layer.outputs;
        let (gw, gb) =
            grad[start..split + layer.outputs].split_at_mut(layer.inputs * layer.outputs);
        let mut dx = vec![0.0; n * layer.inputs];
        for ((dzr, xr), dxr) in dz
            .chunks_exact(layer.outputs)
            .zip(x.chunks_exact(layer.inputs))
            .zip(dx.chunks_exact_mut(layer.inputs))
        {
            for (o, &g) in dzr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let gwr = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                let wr = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    gwr[i] += g * xr[i];
                    dxr[i] += g * wr[i];
                }
            }
        }
        upstream = dx;
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInstability {
            layer: spec.layers.len() - 1,
        });
    }
    Ok(Gradients {
        params: ParamVector::from_raw(grad, spec.hash),
        input: upstream,
    })
}
