//! Test support: slow reference implementations and constructed networks.
//!
//! Compiled for unit tests and behind the `testing` feature for downstream
//! test targets. Nothing here is used by the engine itself.

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform samples in `[lo, hi)`.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi)).expect("valid random shape")
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()))
}

/// Straight-line reference versions of the kernels, written from the
/// definitions with f64 accumulation and no shared helpers.
pub mod oracle {
    use crate::error::{Error, Result};
    use crate::model::{Layer, Network};
    use crate::tensor::{self, Tensor};

    pub fn conv2d_direct(
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let s = input.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let ws = weight.shape();
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::with_capacity(o * oh * ow);
        for oc in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = input.get(&[ic, iy as usize, ix as usize]).unwrap();
                                let wv = weight.get(&[oc, ic, ky, kx]).unwrap();
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
        Tensor::new(vec![o, oh, ow], out).unwrap()
    }

    /// 2×2 stride-2 max pool by scanning each window; the first maximum in
    /// row-major window order wins. Returns outputs and flat input offsets.
    pub fn maxpool_scan(input: &Tensor) -> (Tensor, Vec<usize>) {
        let s = input.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut vals = Vec::new();
        let mut idx = Vec::new();
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let mut best = (f32::NEG_INFINITY, usize::MAX);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let off = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                        let v = input.data()[off];
                        if v > best.0 {
                            best = (v, off);
                        }
                    }
                    vals.push(best.0);
                    idx.push(best.1);
                }
            }
        }
        (Tensor::new(vec![c, h / 2, w / 2], vals).unwrap(), idx)
    }

    pub fn dense_loop(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let out = (0..rows)
            .map(|r| {
                let mut acc = b.data()[r] as f64;
                for c in 0..cols {
                    acc += w.get(&[r, c]).unwrap() as f64 * x.data()[c] as f64;
                }
                acc as f32
            })
            .collect();
        Tensor::new(vec![rows], out).unwrap()
    }

    /// Bilinear resize as a sum of tent weights over all source pixels at the
    /// clamped half-pixel sample position.
    pub fn bilinear_scalar(x: &Tensor, oh: usize, ow: usize) -> Tensor {
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let sample = |o: usize, out_len: usize, in_len: usize| {
            let p = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
            p.max(0.0).min((in_len - 1) as f64)
        };
        let tent = |d: f64| (1.0 - d.abs()).max(0.0);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                let sy = sample(oy, oh, h);
                for ox in 0..ow {
                    let sx = sample(ox, ow, w);
                    let mut acc = 0.0f64;
                    for y in 0..h {
                        for xx in 0..w {
                            let wt = tent(sy - y as f64) * tent(sx - xx as f64);
                            acc += wt * x.get(&[ch, y, xx]).unwrap() as f64;
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out).unwrap()
    }

    pub fn channel_means(g: &Tensor) -> Vec<f32> {
        let s = g.shape();
        let n = s[1] * s[2];
        (0..s[0])
            .map(|c| {
                let mut sum = 0.0f64;
                for i in 0..n {
                    sum += g.data()[c * n + i] as f64;
                }
                (sum / n as f64) as f32
            })
            .collect()
    }

    pub fn weighted_relu_sum(a: &Tensor, alphas: &Tensor) -> Tensor {
        let s = a.shape();
        let (k, h, w) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for c in 0..k {
                    acc += alphas.data()[c] as f64 * a.get(&[c, y, x]).unwrap() as f64;
                }
                out.push(acc.max(0.0) as f32);
            }
        }
        Tensor::new(vec![1, h, w], out).unwrap()
    }

    /// Largest target size accepted by [`finite_diff_gradient`].
    pub const FINITE_DIFF_MAX_ELEMENTS: usize = 4096;

    /// Central differences of one logit with respect to the output of
    /// `target_layer`, re-running only the layers after it.
    pub fn finite_diff_gradient(
        net: &Network,
        activation: &Tensor,
        target_layer: usize,
        class_index: usize,
        h: f32,
    ) -> Result<Tensor> {
        if activation.len() > FINITE_DIFF_MAX_ELEMENTS {
            return Err(Error::SizeLimit(format!(
                "finite differences over {} elements (limit {FINITE_DIFF_MAX_ELEMENTS})",
                activation.len()
            )));
        }
        let logit = |a: Tensor| -> Result<f64> {
            Ok(net.forward_from(target_layer + 1, a)?.data()[class_index] as f64)
        };
        let mut grad = Vec::with_capacity(activation.len());
        for i in 0..activation.len() {
            let mut plus = activation.clone();
            plus.data_mut()[i] += h;
            let mut minus = activation.clone();
            minus.data_mut()[i] -= h;
            grad.push(((logit(plus)? - logit(minus)?) / (2.0 * h as f64)) as f32);
        }
        Tensor::new(activation.shape().to_vec(), grad)
    }

    /// Relu sign pattern and maxpool winners of the layers after `start`.
    fn activation_pattern(net: &Network, start: usize, mut x: Tensor) -> Result<Vec<usize>> {
        let mut pattern = Vec::new();
        for i in start..=net.logits_layer() {
            x = match net.layer(i).unwrap() {
                Layer::Conv {
                    weight,
                    bias,
                    params,
                } => tensor::conv2d(&x, weight, bias, *params)?,
                Layer::Dense { weight, bias } => tensor::dense(&x, weight, bias)?,
                Layer::Relu => {
                    pattern.extend(x.data().iter().map(|&v| usize::from(v > 0.0)));
                    tensor::relu(&x)
                }
                Layer::MaxPool => {
                    let (out, record) = tensor::maxpool2d(&x)?;
                    pattern.extend(record.indices);
                    out
                }
                Layer::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])?
                }
                Layer::Softmax => unreachable!("softmax follows the logits"),
            };
        }
        Ok(pattern)
    }

    /// Whether the logits are affine in every single-element perturbation of
    /// `activation` (the output of `target_layer`) up to ±`h`, so central
    /// differences are exact up to rounding.
    ///
    /// Once the upstream pattern is fixed, each pre-activation and each pool
    /// candidate difference is affine along the perturbation, so a pattern
    /// that agrees at the base point and at both endpoints holds on the
    /// whole segment. A tie that the perturbation breaks changes the
    /// first-wins pool winner at one of the endpoints.
    pub fn kink_free(
        net: &Network,
        activation: &Tensor,
        target_layer: usize,
        h: f32,
    ) -> Result<bool> {
        let start = target_layer + 1;
        let base = activation_pattern(net, start, activation.clone())?;
        for i in 0..activation.len() {
            for step in [h, -h] {
                let mut moved = activation.clone();
                moved.data_mut()[i] += step;
                if activation_pattern(net, start, moved)? != base {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Constructed containers and networks with known structure.
pub mod fixtures {
    use indexmap::IndexMap;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::random_tensor;
    use crate::imaging::{ChannelOrder, Preprocessing, RgbImage};
    use crate::model::{
        build_vgg, ArchSpec, ForwardOptions, LayerKind, LayerSpec, Network, VggConfig,
        WeightContainer,
    };
    use crate::tensor::Tensor;

    pub fn identity_preprocessing(arch: &ArchSpec) -> Preprocessing {
        let [_, h, w] = arch.input_shape;
        Preprocessing::identity(h, w, ChannelOrder::Rgb)
    }

    pub fn container(arch: ArchSpec, tensors: IndexMap<String, Tensor>) -> WeightContainer {
        let pre = identity_preprocessing(&arch);
        WeightContainer::new(arch, pre, tensors).expect("fixture container is consistent")
    }

    pub fn network(arch: ArchSpec, tensors: IndexMap<String, Tensor>) -> Network {
        Network::load(container(arch, tensors)).expect("fixture network loads")
    }

    /// Fills every tensor the architecture binds with uniform weights of
    /// variance `1/fan_in` and small biases.
    pub fn container_with_weights(arch: ArchSpec, rng: &mut impl Rng) -> WeightContainer {
        let mut tensors = IndexMap::new();
        for req in arch.tensor_requirements().expect("fixture arch is valid") {
            let t = if req.shape.len() == 1 {
                random_tensor(rng, &req.shape, -0.1, 0.1)
            } else {
                let fan_in: usize = req.shape[1..].iter().product();
                let a = (3.0 / fan_in as f32).sqrt();
                random_tensor(rng, &req.shape, -a, a)
            };
            tensors.insert(req.name, t);
        }
        container(arch, tensors)
    }

    /// `convs` conv+relu stages (3×3, pad 1) of 2 to 4 channels on a 3×8×8
    /// input; a 2×2 pool follows the last stage and,
    /// at random, earlier ones; then flatten, dense, softmax.
    ///
    /// # Panics
    /// If `convs` is not in `1..=3` or `classes < 1`.
    pub fn random_tiny_arch(rng: &mut impl Rng, convs: usize, classes: usize) -> ArchSpec {
        assert!((1..=3).contains(&convs) && classes >= 1);
        let mut side = 8;
        let mut layers = Vec::new();
        for i in 0..convs {
            layers.push(LayerSpec::conv(
                &format!("conv{}", i + 1),
                rng.gen_range(2..=4),
                3,
                1,
                1,
            ));
            layers.push(LayerSpec::relu());
            let last = i + 1 == convs;
            if last || (side > 2 && rng.gen_bool(0.5)) {
                layers.push(LayerSpec::maxpool());
                side /= 2;
            }
        }
        layers.push(LayerSpec::flatten());
        layers.push(LayerSpec::dense("fc", classes));
        layers.push(LayerSpec::softmax());
        ArchSpec {
            input_shape: [3, 8, 8],
            layers,
            class_labels: None,
        }
    }

    pub fn random_tiny_container(
        rng: &mut impl Rng,
        convs: usize,
        classes: usize,
    ) -> WeightContainer {
        let arch = random_tiny_arch(rng, convs, classes);
        container_with_weights(arch, rng)
    }

    pub fn random_tiny_net(rng: &mut impl Rng, convs: usize, classes: usize) -> Network {
        Network::load(random_tiny_container(rng, convs, classes)).expect("fixture network loads")
    }

    /// 2×4×4 input; conv1 (3 ch) → relu → conv2 (2 ch) → relu → maxpool →
    /// flatten → `fc` (3 classes) → softmax. Both convs are 3×3, pad 1.
    pub fn two_conv_container(rng: &mut impl Rng) -> WeightContainer {
        let arch = ArchSpec {
            input_shape: [2, 4, 4],
            layers: vec![
                LayerSpec::conv("conv1", 3, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::conv("conv2", 2, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::maxpool(),
                LayerSpec::flatten(),
                LayerSpec::dense("fc", 3),
                LayerSpec::softmax(),
            ],
            class_labels: None,
        };
        container_with_weights(arch, rng)
    }

    pub fn vgg_container(cfg: VggConfig, seed: u64) -> WeightContainer {
        let arch = build_vgg(cfg).expect("fixture VGG config is valid");
        container_with_weights(arch, &mut StdRng::seed_from_u64(seed))
    }

    /// Small VGG16-layout network used where the full-size one is too slow.
    pub fn slim_vgg_config(num_classes: usize) -> VggConfig {
        VggConfig {
            num_classes,
            input_size: 32,
            width_divisor: 16,
            hidden_features: 8,
        }
    }

    fn last_dense(arch: &ArchSpec) -> &LayerSpec {
        arch.layers
            .iter()
            .rev()
            .find(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .expect("classifier has a dense layer")
    }

    /// Multiplies the final dense row and bias of `class` by `factor`, which
    /// scales that logit and nothing else.
    pub fn scale_class_row(
        container: &WeightContainer,
        class: usize,
        factor: f32,
    ) -> WeightContainer {
        let mut out = container.clone();
        let names = last_dense(&out.arch).weight_names.clone();
        let w = out.tensors.get_mut(&names[0]).unwrap();
        let cols = w.shape()[1];
        for v in &mut w.data_mut()[class * cols..(class + 1) * cols] {
            *v *= factor;
        }
        out.tensors.get_mut(&names[1]).unwrap().data_mut()[class] *= factor;
        out
    }

    /// Makes `class` win for every input: its dense row and bias become large
    /// and positive while the rest of the head is zeroed.
    pub fn force_class(container: &WeightContainer, class: usize) -> WeightContainer {
        let mut out = container.clone();
        let names = last_dense(&out.arch).weight_names.clone();
        let w = out.tensors.get_mut(&names[0]).unwrap();
        let cols = w.shape()[1];
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = if i / cols == class { v.abs() } else { 0.0 };
        }
        let b = out.tensors.get_mut(&names[1]).unwrap();
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = if i == class { 10.0 } else { 0.0 };
        }
        out
    }

    /// Conv widths of [`dead_channel_container`].
    pub const DEAD_NET_CHANNELS: (usize, usize) = (8, 6);

    /// 3×8×8 input; conv1 (8) → relu → maxpool → conv2 (6) → relu →
    /// maxpool → flatten → dense 3 → softmax. The listed channels of each
    /// conv get zero kernels and bias −1, so they are dead for any input.
    pub fn dead_channel_container(
        rng: &mut impl Rng,
        dead_first: &[usize],
        dead_second: &[usize],
    ) -> WeightContainer {
        let (c1, c2) = DEAD_NET_CHANNELS;
        let arch = ArchSpec {
            input_shape: [3, 8, 8],
            layers: vec![
                LayerSpec::conv("conv1", c1, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::maxpool(),
                LayerSpec::conv("conv2", c2, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::maxpool(),
                LayerSpec::flatten(),
                LayerSpec::dense("fc", 3),
                LayerSpec::softmax(),
            ],
            class_labels: None,
        };
        let mut c = container_with_weights(arch, rng);
        for (name, dead) in [("conv1", dead_first), ("conv2", dead_second)] {
            let w = c.tensors.get_mut(&format!("{name}.weight")).unwrap();
            let per_out = w.len() / w.shape()[0];
            for &k in dead {
                w.data_mut()[k * per_out..(k + 1) * per_out].fill(0.0);
            }
            let b = c.tensors.get_mut(&format!("{name}.bias")).unwrap();
            for &k in dead {
                b.data_mut()[k] = -1.0;
            }
        }
        c
    }

    pub const LEFT_RIGHT_SIDE: usize = 16;

    /// Two-class network wired so class 0 responds to red on the left half
    /// and class 1 to green on the right half.
    ///
    /// 3×16×16 input scaled by 1/255; conv1 has two 3×3 kernels with only
    /// the centre tap set (channel 0 copies red, channel 1 copies green);
    /// relu → maxpool → flatten (2×8×8) → dense 2 → softmax. Class 0's row
    /// is +1 on channel 0 and −1 on channel 1 over pooled columns 0..4,
    /// class 1's row the mirror image over columns 4..8.
    pub fn left_right_container() -> WeightContainer {
        let side = LEFT_RIGHT_SIDE;
        let arch = ArchSpec {
            input_shape: [3, side, side],
            layers: vec![
                LayerSpec::conv("conv1", 2, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::maxpool(),
                LayerSpec::flatten(),
                LayerSpec::dense("fc", 2),
                LayerSpec::softmax(),
            ],
            class_labels: Some(vec!["left-red".into(), "right-green".into()]),
        };
        let mut kernel = vec![0.0f32; 2 * 3 * 9];
        kernel[4] = 1.0; // out 0, in R, centre
        kernel[27 + 9 + 4] = 1.0; // out 1, in G, centre
        let pooled = side / 2;
        let plane = pooled * pooled;
        let mut fc = vec![0.0f32; 2 * 2 * plane];
        for y in 0..pooled {
            for x in 0..pooled {
                let p = y * pooled + x;
                let (class, own, other) = if x < pooled / 2 { (0, 0, 1) } else { (1, 1, 0) };
                fc[class * 2 * plane + own * plane + p] = 1.0;
                fc[class * 2 * plane + other * plane + p] = -1.0;
            }
        }
        let mut tensors = IndexMap::new();
        tensors.insert(
            "conv1.weight".into(),
            Tensor::new(vec![2, 3, 3, 3], kernel).unwrap(),
        );
        tensors.insert("conv1.bias".into(), Tensor::zeros(vec![2]).unwrap());
        tensors.insert(
            "fc.weight".into(),
            Tensor::new(vec![2, 2 * plane], fc).unwrap(),
        );
        tensors.insert("fc.bias".into(), Tensor::zeros(vec![2]).unwrap());
        let pre = Preprocessing {
            resize: [side, side],
            channel_order: ChannelOrder::Rgb,
            mean: [0.0; 3],
            scale: [1.0 / 255.0; 3],
        };
        WeightContainer::new(arch, pre, tensors).expect("left/right fixture is consistent")
    }

    /// Red left half, green right half, with a little seeded noise.
    pub fn left_right_image(seed: u64) -> RgbImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let side = LEFT_RIGHT_SIDE;
        RgbImage::from_fn(side, side, |x, _| {
            let mut noise = || rng.gen_range(0..=20u8);
            if x < side / 2 {
                [255 - noise(), noise(), noise()]
            } else {
                [noise(), 255 - noise(), noise()]
            }
        })
    }

    /// A random network, input, gradient target and class for checking
    /// backpropagation against finite differences.
    #[derive(Debug, Clone)]
    pub struct GradCheckCase {
        pub net: Network,
        pub input: Tensor,
        pub target_layer: usize,
        pub class_index: usize,
        /// Output of `target_layer` on `input`.
        pub activation: Tensor,
    }

    pub const GRADCHECK_STEP: f32 = 1e-2;

    /// Draws cases until one is [kink-free](super::oracle::kink_free) at
    /// [`GRADCHECK_STEP`]. Returns the case and the number of rejected draws.
    /// Targets alternate between a conv output and a relu output.
    pub fn gradcheck_case(rng: &mut impl Rng, max_draws: usize) -> Option<(GradCheckCase, usize)> {
        for draw in 0..max_draws {
            let convs = rng.gen_range(1..=2);
            let classes = rng.gen_range(2..=4);
            let net = random_tiny_net(rng, convs, classes);
            let ordinal = rng.gen_range(1..=convs);
            let target_layer = if rng.gen_bool(0.5) {
                net.conv_ordinal_to_layer_index(ordinal).unwrap()
            } else {
                net.feature_layer(ordinal).unwrap()
            };
            let input = random_tensor(rng, &net.input_shape(), -1.0, 1.0);
            let class_index = rng.gen_range(0..classes);
            let opts = ForwardOptions::capture([target_layer]).with_backward_from(target_layer);
            let activation =
                net.forward_with(&input, &opts).unwrap().trace.entries[&target_layer].clone();
            if !super::oracle::kink_free(&net, &activation, target_layer, GRADCHECK_STEP).unwrap() {
                continue;
            }
            return Some((
                GradCheckCase {
                    net,
                    input,
                    target_layer,
                    class_index,
                    activation,
                },
                draw,
            ));
        }
        None
    }
}

/// Raw CVW byte surgery for corruption tests, independent of the engine's
/// reader and writer.
pub mod cvw_bytes {
    /// Splits a file into its metadata JSON and the blob section.
    pub fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta = serde_json::from_slice(&bytes[12..12 + len]).expect("metadata is JSON");
        (meta, bytes[12 + len..].to_vec())
    }

    pub fn assemble(version: u32, meta: &serde_json::Value, blob: &[u8]) -> Vec<u8> {
        let text = serde_json::to_vec(meta).unwrap();
        let mut out = b"CVW1".to_vec();
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(&text);
        out.extend_from_slice(blob);
        out
    }
}
