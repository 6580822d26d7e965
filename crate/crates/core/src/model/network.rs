use std::collections::{BTreeMap, BTreeSet};

use super::arch::{ArchSpec, LayerKind};
use super::container::WeightContainer;
use crate::error::{Error, Result};
use crate::imaging::Preprocessing;
use crate::tensor::{self, ArgmaxRecord, ConvParams, Tensor};

/// A layer with its weights bound.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        weight: Tensor,
        bias: Tensor,
        params: ConvParams,
    },
    Relu,
    MaxPool,
    Flatten,
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Softmax,
}

/// An immutable, weight-bound sequential network.
///
/// Layer indices are 0-based positions in the architecture. Conv ordinals
/// are 1-based positions among the conv layers only.
#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchSpec,
    preprocessing: Preprocessing,
    layers: Vec<Layer>,
    input_shapes: Vec<Vec<usize>>,
    output_shapes: Vec<Vec<usize>>,
    conv_layers: Vec<usize>,
}

/// Captured activations plus the bookkeeping a backward pass needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    /// Output of each captured layer.
    pub entries: BTreeMap<usize, Tensor>,
    /// Argmax routing of each recorded maxpool layer.
    pub pool_argmax: BTreeMap<usize, ArgmaxRecord>,
    /// Input of each recorded relu layer.
    pub pre_activation: BTreeMap<usize, Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Layers whose outputs are kept in the trace.
    pub capture: BTreeSet<usize>,
    /// Record backward bookkeeping for every layer after this one. Without
    /// it, bookkeeping starts after the deepest captured layer.
    pub backward_from: Option<usize>,
}

impl ForwardOptions {
    pub fn capture(layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            capture: layers.into_iter().collect(),
            backward_from: None,
        }
    }

    pub fn with_backward_from(mut self, layer: usize) -> Self {
        self.backward_from = Some(layer);
        self
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Pre-softmax class scores.
    pub logits: Tensor,
    pub probs: Tensor,
    pub trace: ActivationTrace,
}

impl Network {
    pub fn load(container: WeightContainer) -> Result<Self> {
        container.validate()?;
        let chain = container.arch.validate()?;
        let WeightContainer {
            arch,
            preprocessing,
            mut tensors,
            ..
        } = container;
        let mut take = |name: &str| -> Result<Tensor> {
            tensors
                .swap_remove(name)
                .ok_or_else(|| Error::Arch(format!("tensor `{name}` missing")))
        };
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            let layer = match spec.kind {
                LayerKind::Conv {
                    stride, padding, ..
                } => Layer::Conv {
                    weight: take(&spec.weight_names[0])?,
                    bias: take(&spec.weight_names[1])?,
                    params: ConvParams::new(stride, padding)?,
                },
                LayerKind::Dense { .. } => Layer::Dense {
                    weight: take(&spec.weight_names[0])?,
                    bias: take(&spec.weight_names[1])?,
                },
                LayerKind::Relu => Layer::Relu,
                LayerKind::MaxPool => Layer::MaxPool,
                LayerKind::Flatten => Layer::Flatten,
                LayerKind::Softmax => Layer::Softmax,
            };
            layers.push(layer);
        }
        let conv_layers = arch
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Conv { .. }))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            arch,
            preprocessing,
            layers,
            input_shapes: chain.inputs,
            output_shapes: chain.outputs,
            conv_layers,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn layer(&self, index: usize) -> Option<&Layer> {
        self.layers.get(index)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input_shape
    }

    pub fn layer_input_shape(&self, index: usize) -> &[usize] {
        &self.input_shapes[index]
    }

    pub fn layer_output_shape(&self, index: usize) -> &[usize] {
        &self.output_shapes[index]
    }

    pub fn num_classes(&self) -> usize {
        self.output_shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn class_label(&self, class: usize) -> Option<&str> {
        self.arch
            .class_labels
            .as_ref()
            .and_then(|l| l.get(class))
            .map(String::as_str)
    }

    /// Index of the layer producing the logits (the softmax input).
    pub fn logits_layer(&self) -> usize {
        self.layers.len() - 2
    }

    /// First layer of the classifier head (the first flatten or dense).
    pub fn classifier_start(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Flatten | Layer::Dense { .. }))
            .unwrap_or(self.logits_layer())
    }

    pub fn conv_layer_count(&self) -> usize {
        self.conv_layers.len()
    }

    /// Arch indices of the conv layers, in forward order.
    pub fn conv_layers(&self) -> &[usize] {
        &self.conv_layers
    }

    pub fn conv_ordinal_to_layer_index(&self, ordinal: usize) -> Result<usize> {
        if ordinal == 0 || ordinal > self.conv_layers.len() {
            return Err(Error::OutOfRange {
                what: "conv ordinal",
                index: ordinal,
                valid: format!("1..={}", self.conv_layers.len()),
            });
        }
        Ok(self.conv_layers[ordinal - 1])
    }

    pub fn conv_ordinal_of(&self, layer: usize) -> Option<usize> {
        self.conv_layers
            .iter()
            .position(|&l| l == layer)
            .map(|p| p + 1)
    }

    /// The layer whose output is the visualized feature map of a conv: the
    /// ReLU right after it, or the conv itself when none follows.
    pub fn feature_layer(&self, ordinal: usize) -> Result<usize> {
        let conv = self.conv_ordinal_to_layer_index(ordinal)?;
        Ok(match self.layers.get(conv + 1) {
            Some(Layer::Relu) => conv + 1,
            _ => conv,
        })
    }

    pub fn forward(&self, input: &Tensor, capture: &[usize]) -> Result<ForwardOutput> {
        self.forward_with(input, &ForwardOptions::capture(capture.iter().copied()))
    }

    pub fn forward_with(&self, input: &Tensor, opts: &ForwardOptions) -> Result<ForwardOutput> {
        if input.shape() != self.arch.input_shape {
            return Err(Error::shape(format!(
                "network input must be {:?}, got {:?}",
                self.arch.input_shape,
                input.shape()
            )));
        }
        if let Some(&bad) = opts.capture.iter().find(|&&i| i >= self.layers.len()) {
            return Err(Error::OutOfRange {
                what: "capture layer",
                index: bad,
                valid: format!("0..{}", self.layers.len()),
            });
        }
        if let Some(from) = opts.backward_from {
            if from >= self.layers.len() {
                return Err(Error::OutOfRange {
                    what: "backward layer",
                    index: from,
                    valid: format!("0..{}", self.layers.len()),
                });
            }
        }
        let bookkeeping_from = opts
            .backward_from
            .or_else(|| opts.capture.iter().next_back().copied())
            .map(|l| l + 1);

        let mut trace = ActivationTrace::default();
        let logits = self.run(0, input.clone(), Some((opts, bookkeeping_from)), &mut trace)?;
        let probs = tensor::softmax(&logits)?;
        let softmax_layer = self.layers.len() - 1;
        if opts.capture.contains(&softmax_layer) {
            trace.entries.insert(softmax_layer, probs.clone());
        }
        Ok(ForwardOutput {
            logits,
            probs,
            trace,
        })
    }

    /// Runs layers `start..` on `activation`, which must have the shape of
    /// layer `start`'s input, and returns the logits.
    pub fn forward_from(&self, start: usize, activation: Tensor) -> Result<Tensor> {
        if start > self.logits_layer() {
            return Err(Error::OutOfRange {
                what: "start layer",
                index: start,
                valid: format!("0..={}", self.logits_layer()),
            });
        }
        if activation.shape() != self.input_shapes[start].as_slice() {
            return Err(Error::shape(format!(
                "layer {start} expects input {:?}, got {:?}",
                self.input_shapes[start],
                activation.shape()
            )));
        }
        self.run(start, activation, None, &mut ActivationTrace::default())
    }

    fn run(
        &self,
        start: usize,
        mut x: Tensor,
        record: Option<(&ForwardOptions, Option<usize>)>,
        trace: &mut ActivationTrace,
    ) -> Result<Tensor> {
        for i in start..=self.logits_layer() {
            let keep_bookkeeping = matches!(record, Some((_, Some(from))) if i >= from);
            x = match &self.layers[i] {
                Layer::Conv {
                    weight,
                    bias,
                    params,
                } => tensor::conv2d(&x, weight, bias, *params)?,
                Layer::Relu => {
                    let out = tensor::relu(&x);
                    if keep_bookkeeping {
                        trace.pre_activation.insert(i, x);
                    }
                    out
                }
                Layer::MaxPool => {
                    let (out, record) = tensor::maxpool2d(&x)?;
                    if keep_bookkeeping {
                        trace.pool_argmax.insert(i, record);
                    }
                    out
                }
                Layer::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])?
                }
                Layer::Dense { weight, bias } => tensor::dense(&x, weight, bias)?,
                Layer::Softmax => unreachable!("softmax is always the last layer"),
            };
            if let Some((opts, _)) = record {
                if opts.capture.contains(&i) {
                    trace.entries.insert(i, x.clone());
                }
            }
        }
        Ok(x)
    }
}

/// Binds a container's weights into a [`Network`].
pub fn load_network(container: WeightContainer) -> Result<Network> {
    Network::load(container)
}
