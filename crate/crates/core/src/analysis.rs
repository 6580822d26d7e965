//! Dead feature maps and classification readouts.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

pub const DEFAULT_DEAD_EPS: f64 = 1e-6;

/// `x` rounded to 6 significant decimal digits. Non-finite values and zero
/// pass through.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// `serialize_with` helper writing floats through [`round_sig6`].
pub fn serialize_sig6<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig6(*x))
}

/// Channels of a K×H×W activation whose maximum is `≤ eps`, ascending.
pub fn dead_channels(act: &Tensor, eps: f64) -> Result<Vec<usize>> {
    let (k, h, w) = act.chw()?;
    let plane = h * w;
    Ok((0..k)
        .filter(|&c| {
            let max = act.data()[c * plane..(c + 1) * plane]
                .iter()
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            max as f64 <= eps
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDeadStats {
    /// Conv ordinal, 1-based.
    pub layer: usize,
    pub channels: usize,
    pub dead: usize,
    pub dead_indices: Vec<usize>,
    #[serde(serialize_with = "serialize_sig6")]
    pub dead_fraction: f64,
}

impl LayerDeadStats {
    pub fn new(layer: usize, act: &Tensor, eps: f64) -> Result<Self> {
        let dead_indices = dead_channels(act, eps)?;
        let channels = act.shape()[0];
        Ok(Self {
            layer,
            channels,
            dead: dead_indices.len(),
            dead_fraction: dead_indices.len() as f64 / channels as f64,
            dead_indices,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadMapReport {
    pub model: String,
    pub input: String,
    #[serde(serialize_with = "serialize_sig6")]
    pub epsilon: f64,
    pub layers: Vec<LayerDeadStats>,
}

/// Dead-channel statistics of the feature map of every conv layer for one
/// preprocessed input.
pub fn dead_map_stats(net: &Network, input: &Tensor, eps: f64) -> Result<Vec<LayerDeadStats>> {
    if eps.is_nan() {
        return Err(Error::InvalidArgument("epsilon must not be NaN".into()));
    }
    let features = (1..=net.conv_layer_count())
        .map(|o| net.feature_layer(o))
        .collect::<Result<Vec<_>>>()?;
    let out = net.forward(input, &features)?;
    features
        .iter()
        .enumerate()
        .map(|(i, l)| LayerDeadStats::new(i + 1, &out.trace.entries[l], eps))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKEntry {
    pub class_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(serialize_with = "serialize_sig6")]
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopK {
    pub top: Vec<TopKEntry>,
}

/// The `k` most probable classes, descending; ties go to the lower index.
/// `k` larger than the class count is clamped.
pub fn top_k(probs: &Tensor, k: usize, labels: Option<&[String]>) -> TopK {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let p = probs.data();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(k);
    TopK {
        top: order
            .into_iter()
            .map(|i| TopKEntry {
                class_index: i,
                label: labels.and_then(|l| l.get(i)).cloned(),
                probability: p[i] as f64,
            })
            .collect(),
    }
}
