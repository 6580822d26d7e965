use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// Always a 2×2 window with stride 2.
    MaxPool,
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Number of container tensors a layer of this kind binds.
    pub fn weight_count(&self) -> usize {
        match self {
            LayerKind::Conv { .. } | LayerKind::Dense { .. } => 2,
            _ => 0,
        }
    }

    /// Human-readable parameter summary used by the `inspect` table.
    pub fn describe_params(&self) -> String {
        match *self {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => format!("out={out_channels} k={kernel} s={stride} p={padding}"),
            LayerKind::MaxPool => "window=2 stride=2".to_string(),
            LayerKind::Dense { out_features } => format!("out={out_features}"),
            _ => String::new(),
        }
    }
}

/// One layer of a sequential network plus the names of the container
/// tensors it binds (weight then bias, for conv and dense).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub weight_names: Vec<String>,
}

impl LayerSpec {
    /// Conv layer binding `{name}.weight` and `{name}.bias`.
    pub fn conv(
        name: &str,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            kind: LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            },
            weight_names: vec![format!("{name}.weight"), format!("{name}.bias")],
        }
    }

    pub fn dense(name: &str, out_features: usize) -> Self {
        Self {
            kind: LayerKind::Dense { out_features },
            weight_names: vec![format!("{name}.weight"), format!("{name}.bias")],
        }
    }

    pub fn relu() -> Self {
        Self::bare(LayerKind::Relu)
    }

    pub fn maxpool() -> Self {
        Self::bare(LayerKind::MaxPool)
    }

    pub fn flatten() -> Self {
        Self::bare(LayerKind::Flatten)
    }

    pub fn softmax() -> Self {
        Self::bare(LayerKind::Softmax)
    }

    fn bare(kind: LayerKind) -> Self {
        Self {
            kind,
            weight_names: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    /// C×H×W of the network input.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_labels: Option<Vec<String>>,
}

/// Per-layer input and output shapes of a validated architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeChain {
    pub inputs: Vec<Vec<usize>>,
    pub outputs: Vec<Vec<usize>>,
}

/// A container tensor an architecture expects, with its required shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRequirement {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArchSpec {
    /// Propagates shapes through the layer list and checks every structural
    /// rule: positive dims, weight-name counts, unique names, at least one
    /// conv, a single trailing softmax over a rank-1 input, and matching
    /// class labels.
    pub fn validate(&self) -> Result<ShapeChain> {
        let arch_err = |i: usize, msg: String| Error::Arch(format!("layer {i}: {msg}"));
        if self.input_shape.contains(&0) {
            return Err(Error::Arch(format!(
                "input shape {:?} has a zero dim",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Arch("no layers".into()));
        }
        if !self
            .layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Conv { .. }))
        {
            return Err(Error::Arch("at least one conv layer is required".into()));
        }
        let softmax_count = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Softmax)
            .count();
        if softmax_count != 1 || self.layers.last().map(|l| &l.kind) != Some(&LayerKind::Softmax) {
            return Err(Error::Arch(
                "exactly one softmax is required and it must be the last layer".into(),
            ));
        }

        let mut seen = HashSet::new();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight_names.len() != layer.kind.weight_count() {
                return Err(arch_err(
                    i,
                    format!(
                        "{} binds {} tensors, expected {}",
                        layer.kind.name(),
                        layer.weight_names.len(),
                        layer.kind.weight_count()
                    ),
                ));
            }
            for name in &layer.weight_names {
                if !seen.insert(name.as_str()) {
                    return Err(arch_err(i, format!("tensor name `{name}` bound twice")));
                }
            }
            let next = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [_, h, w] = shape[..] else {
                        return Err(arch_err(
                            i,
                            format!("conv needs a C×H×W input, got {shape:?}"),
                        ));
                    };
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(arch_err(
                            i,
                            "conv out_channels, kernel and stride must be ≥ 1".into(),
                        ));
                    }
                    let padded = (h.min(w)) + 2 * padding;
                    if padded < kernel {
                        return Err(arch_err(
                            i,
                            format!("kernel {kernel} exceeds padded input {shape:?} (padding {padding})"),
                        ));
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    vec![out_channels, oh, ow]
                }
                LayerKind::Relu => shape.clone(),
                LayerKind::MaxPool => match shape[..] {
                    [c, h, w] if h % 2 == 0 && w % 2 == 0 => vec![c, h / 2, w / 2],
                    _ => {
                        return Err(arch_err(
                            i,
                            format!("maxpool needs a C×H×W input with even H and W, got {shape:?}"),
                        ))
                    }
                },
                LayerKind::Flatten => match shape[..] {
                    [c, h, w] => vec![c * h * w],
                    _ => {
                        return Err(arch_err(
                            i,
                            format!("flatten needs a C×H×W input, got {shape:?}"),
                        ))
                    }
                },
                LayerKind::Dense { out_features } => {
                    if shape.len() != 1 {
                        return Err(arch_err(
                            i,
                            format!("dense needs a flat input, got {shape:?}"),
                        ));
                    }
                    if out_features == 0 {
                        return Err(arch_err(i, "dense out_features must be ≥ 1".into()));
                    }
                    vec![out_features]
                }
                LayerKind::Softmax => {
                    if shape.len() != 1 {
                        return Err(arch_err(
                            i,
                            format!("softmax needs a flat input, got {shape:?}"),
                        ));
                    }
                    shape.clone()
                }
            };
            inputs.push(std::mem::replace(&mut shape, next.clone()));
            outputs.push(next);
        }

        if let Some(labels) = &self.class_labels {
            let classes = outputs.last().map(|s| s[0]).unwrap_or(0);
            if labels.len() != classes {
                return Err(Error::Arch(format!(
                    "{} class labels for {classes} classes",
                    labels.len()
                )));
            }
        }
        Ok(ShapeChain { inputs, outputs })
    }

    /// Every tensor the layers bind, in layer order, with the shape the layer
    /// requires given the validated shape chain.
    pub fn tensor_requirements(&self) -> Result<Vec<TensorRequirement>> {
        let chain = self.validate()?;
        let mut reqs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let shapes: Vec<Vec<usize>> = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let in_c = chain.inputs[i][0];
                    vec![vec![out_channels, in_c, kernel, kernel], vec![out_channels]]
                }
                LayerKind::Dense { out_features } => {
                    vec![vec![out_features, chain.inputs[i][0]], vec![out_features]]
                }
                _ => Vec::new(),
            };
            for (name, shape) in layer.weight_names.iter().zip(shapes) {
                reqs.push(TensorRequirement {
                    layer: i,
                    name: name.clone(),
                    shape,
                });
            }
        }
        Ok(reqs)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .count()
    }
}

/// Width and resolution knobs for VGG16-layout networks. The defaults are
/// the canonical ImageNet VGG16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VggConfig {
    pub num_classes: usize,
    pub input_size: usize,
    /// Divides every conv width (64, 128, 256, 512).
    pub width_divisor: usize,
    pub hidden_features: usize,
}

impl VggConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            input_size: 224,
            width_divisor: 1,
            hidden_features: 4096,
        }
    }
}

const VGG16_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

/// The canonical VGG16: 3×224×224 input, 13 conv layers (3×3, stride 1,
/// pad 1, each followed by ReLU) in five pooled blocks, then
/// fc 4096 → fc 4096 → fc `num_classes` → softmax.
pub fn build_vgg16(num_classes: usize) -> Result<ArchSpec> {
    build_vgg(VggConfig::new(num_classes))
}

/// VGG16 layer layout with configurable widths and input size.
pub fn build_vgg(cfg: VggConfig) -> Result<ArchSpec> {
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "VGG16 needs at least 2 classes, got {}",
            cfg.num_classes
        )));
    }
    if cfg.width_divisor == 0 || 64 % cfg.width_divisor != 0 {
        return Err(Error::InvalidArgument(format!(
            "width divisor {} must divide 64",
            cfg.width_divisor
        )));
    }
    if cfg.input_size < 32 || !cfg.input_size.is_multiple_of(32) {
        return Err(Error::InvalidArgument(format!(
            "input size {} must be a positive multiple of 32",
            cfg.input_size
        )));
    }
    if cfg.hidden_features == 0 {
        return Err(Error::InvalidArgument("hidden_features must be ≥ 1".into()));
    }
    let mut layers = Vec::new();
    for (block, &(width, reps)) in VGG16_BLOCKS.iter().enumerate() {
        for r in 0..reps {
            let name = format!("conv{}_{}", block + 1, r + 1);
            layers.push(LayerSpec::conv(&name, width / cfg.width_divisor, 3, 1, 1));
            layers.push(LayerSpec::relu());
        }
        layers.push(LayerSpec::maxpool());
    }
    layers.push(LayerSpec::flatten());
    layers.push(LayerSpec::dense("fc6", cfg.hidden_features));
    layers.push(LayerSpec::relu());
    layers.push(LayerSpec::dense("fc7", cfg.hidden_features));
    layers.push(LayerSpec::relu());
    layers.push(LayerSpec::dense("fc8", cfg.num_classes));
    layers.push(LayerSpec::softmax());
    let arch = ArchSpec {
        input_shape: [3, cfg.input_size, cfg.input_size],
        layers,
        class_labels: None,
    };
    arch.validate()?;
    Ok(arch)
}

/// Conv ordinals to visualize for a network with `n` conv layers:
/// `n/4`, `n/2`, `3n/4` and `n`, each rounded half-up, clamped to `1..=n`,
/// deduplicated and ascending.
pub fn select_fraction_layers(n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // floor(k·n/4 + 1/2) == (k·n + 2) / 4
    let mut picks: Vec<usize> = [1usize, 2, 3, 4]
        .iter()
        .map(|&k| ((k * n + 2) / 4).clamp(1, n))
        .collect();
    picks.dedup();
    picks
}
