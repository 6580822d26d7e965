//! Gradient-weighted class activation maps.
//!
//! Channel weights are the spatial mean of the class-logit gradient over
//! each feature map; the map is the ReLU of the weighted channel sum. It is
//! upsampled to the network input size and then divided by its maximum.

use crate::error::{Error, Result};
use crate::gradients::backward_to_layer;
use crate::model::{ForwardOptions, Network};
use crate::tensor::{bilinear_resize, Tensor};

/// Maps with a maximum at or below this are treated as all-zero.
pub const NORMALIZE_EPS: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassSelect {
    /// Argmax of the logits.
    #[default]
    Auto,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSelect {
    /// The deepest conv layer.
    #[default]
    Last,
    /// 1-based conv ordinal.
    Ordinal(usize),
}

#[derive(Debug, Clone)]
pub struct GradCamResult {
    pub class_index: usize,
    pub conv_ordinal: usize,
    /// Arch index of the activation the map was computed on.
    pub target_layer: usize,
    /// Rectified weighted sum at feature-map resolution, 1×Hc×Wc.
    pub raw_map: Tensor,
    /// Upsampled to the input resolution and scaled into [0, 1], 1×H×W.
    pub heatmap: Tensor,
    pub alphas: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl GradCamResult {
    /// True when no pixel received positive attribution.
    pub fn is_degenerate(&self) -> bool {
        self.raw_map.max() <= NORMALIZE_EPS
    }

    /// `(y, x)` of the heatmap maximum, first in row-major order on ties.
    pub fn max_location(&self) -> (usize, usize) {
        let w = self.heatmap.shape()[2];
        let i = self.heatmap.argmax();
        (i / w, i % w)
    }
}

/// `α_k = mean_{i,j} grads[k,i,j]`.
pub fn channel_weights(grads: &Tensor) -> Result<Tensor> {
    let (k, h, w) = grads.chw()?;
    let area = (h * w) as f64;
    let alphas = (0..k)
        .map(|c| {
            let sum: f64 = grads.data()[c * h * w..(c + 1) * h * w]
                .iter()
                .map(|&v| v as f64)
                .sum();
            (sum / area) as f32
        })
        .collect();
    Tensor::new(vec![k], alphas)
}

/// `out[i,j] = max(0, Σ_k α_k · A[k,i,j])`, returned as 1×Hc×Wc.
pub fn gradcam_map(activations: &Tensor, alphas: &Tensor) -> Result<Tensor> {
    let (k, h, w) = activations.chw()?;
    if alphas.shape() != [k] {
        return Err(Error::shape(format!(
            "{} channel weights for {k} activation channels",
            alphas.len()
        )));
    }
    let mut acc = vec![0.0f32; h * w];
    for (c, &a) in alphas.data().iter().enumerate() {
        let plane = &activations.data()[c * h * w..(c + 1) * h * w];
        for (dst, &v) in acc.iter_mut().zip(plane) {
            *dst += a * v;
        }
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    Tensor::new(vec![1, h, w], acc)
}

/// Divides a non-negative map by its maximum; maps whose maximum is at most
/// [`NORMALIZE_EPS`] become all zeros.
pub fn normalize_map(raw: &Tensor) -> Tensor {
    let max = raw.max();
    if max > NORMALIZE_EPS {
        raw.map(|v| (v / max).clamp(0.0, 1.0))
    } else {
        raw.map(|_| 0.0)
    }
}

/// Full pipeline: forward with backward bookkeeping, gradient of the class
/// logit at the post-ReLU activation of the chosen conv, channel weights,
/// weighted map, resize to the input size, normalize.
pub fn compute_gradcam(
    net: &Network,
    input: &Tensor,
    class: ClassSelect,
    layer: LayerSelect,
) -> Result<GradCamResult> {
    let conv_ordinal = match layer {
        LayerSelect::Last => net.conv_layer_count(),
        LayerSelect::Ordinal(o) => o,
    };
    let target_layer = net.feature_layer(conv_ordinal)?;
    let opts = ForwardOptions::capture([target_layer]).with_backward_from(target_layer);
    let out = net.forward_with(input, &opts)?;
    let class_index = match class {
        ClassSelect::Auto => out.logits.argmax(),
        ClassSelect::Index(c) => c,
    };
    let grads = backward_to_layer(net, &out.trace, class_index, target_layer)?;
    let activations = &out.trace.entries[&target_layer];
    let alphas = channel_weights(&grads)?;
    let raw_map = gradcam_map(activations, &alphas)?;
    let [_, h, w] = net.input_shape();
    let heatmap = normalize_map(&bilinear_resize(&raw_map, h, w)?);
    Ok(GradCamResult {
        class_index,
        conv_ordinal,
        target_layer,
        raw_map,
        heatmap,
        alphas,
        logits: out.logits,
        probs: out.probs,
    })
}
