// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Small feed-forward networks with exact reverse-mode gradients.
//!
//! Everything runs in `f64`. Models are plain data: a [`ModelSpec`] describes
//! the layout and a [`ParamVector`] carries the weights, so the federated
//! layers above can add, subtract and interpolate models freely.

mod adam;
mod loss;
mod model;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use loss::{
    argmax, cross_entropy, gradient, kl_divergence, kl_divergence_grad, kl_rows, log_softmax,
    softmax, Loss,
};
pub use model::{
    backward, forward, forward_trace, Activation, FeatureStats, ForwardOutput, Gradients,
    LayerMoments, LayerSpec, ModelSpec, Trace,
};
pub use params::{interpolate, ParamVector};
pub use tensor::Tensor;
