use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Stride and symmetric zero padding of a convolution. The kernel size comes
/// from the weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be ≥ 1".into()));
        }
        Ok(Self { stride, padding })
    }

    /// `floor((input + 2·padding − kernel) / stride) + 1`, which must be ≥ 1.
    pub fn output_dim(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be ≥ 1".into()));
        }
        let padded = input + 2 * self.padding;
        if kernel == 0 || padded < kernel {
            return Err(Error::shape(format!(
                "kernel {kernel} larger than padded input {padded} (input {input}, padding {})",
                self.padding
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Flat input offsets of the maximum in each pooling window, one per output
/// element, recorded so the backward pass can route gradients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxRecord {
    pub input_shape: [usize; 3],
    pub indices: Vec<usize>,
}

fn conv_dims(
    input: &Tensor,
    weight: &Tensor,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (in_c, in_h, in_w) = input.chw()?;
    let [out_c, w_in, kh, kw] = weight.shape()[..] else {
        return Err(Error::shape(format!(
            "conv weight must be O×I×KH×KW, got {:?}",
            weight.shape()
        )));
    };
    if w_in != in_c {
        return Err(Error::shape(format!(
            "conv input has {in_c} channels but weight {:?} expects I={w_in}",
            weight.shape()
        )));
    }
    Ok((in_c, in_h, in_w, out_c, kh, kw))
}

/// Valid output positions `o` with `lo <= o < hi` such that
/// `o·stride + k − padding` lands inside `0..input`.
fn valid_range(out_len: usize, input: usize, k: usize, p: ConvParams) -> (usize, usize) {
    let s = p.stride;
    // smallest o with o*s + k >= padding
    let lo = if k >= p.padding {
        0
    } else {
        (p.padding - k).div_ceil(s)
    };
    // largest o with o*s + k - padding <= input - 1
    let limit = input + p.padding; // o*s + k < input + padding
    let hi = if k >= limit {
        0
    } else {
        ((limit - k - 1) / s + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

/// 2-D cross-correlation with zero padding:
/// `out[o,y,x] = bias[o] + Σ_{i,ky,kx} weight[o,i,ky,kx] · in[i, y·s+ky−p, x·s+kx−p]`.
///
/// Each output element accumulates in the fixed order `i`, `ky`, `kx`, so
/// results do not depend on how output channels are spread over threads.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    params: ConvParams,
) -> Result<Tensor> {
    let (in_c, in_h, in_w, out_c, kh, kw) = conv_dims(input, weight)?;
    if bias.shape() != [out_c] {
        return Err(Error::shape(format!(
            "conv bias shape {:?} does not match O={out_c}",
            bias.shape()
        )));
    }
    let out_h = params.output_dim(in_h, kh)?;
    let out_w = params.output_dim(in_w, kw)?;
    let plane = out_h * out_w;
    let src = input.data();
    let wts = weight.data();
    let mut out = vec![0.0f32; out_c * plane];

    out.par_chunks_mut(plane).enumerate().for_each(|(o, acc)| {
        for i in 0..in_c {
            let in_plane = &src[i * in_h * in_w..(i + 1) * in_h * in_w];
            for ky in 0..kh {
                let (y_lo, y_hi) = valid_range(out_h, in_h, ky, params);
                for kx in 0..kw {
                    let wv = wts[((o * in_c + i) * kh + ky) * kw + kx];
                    let (x_lo, x_hi) = valid_range(out_w, in_w, kx, params);
                    for y in y_lo..y_hi {
                        let iy = y * params.stride + ky - params.padding;
                        let row = &in_plane[iy * in_w..(iy + 1) * in_w];
                        let acc_row = &mut acc[y * out_w..(y + 1) * out_w];
                        if params.stride == 1 {
                            let off = kx as isize - params.padding as isize;
                            let src_row = &row
                                [(x_lo as isize + off) as usize..(x_hi as isize + off) as usize];
                            for (a, &v) in acc_row[x_lo..x_hi].iter_mut().zip(src_row) {
                                *a += wv * v;
                            }
                        } else {
                            for x in x_lo..x_hi {
                                acc_row[x] += wv * row[x * params.stride + kx - params.padding];
                            }
                        }
                    }
                }
            }
        }
        let b = bias.data()[o];
        for a in acc.iter_mut() {
            *a += b;
        }
    });
    Ok(Tensor::from_parts_unchecked(vec![out_c, out_h, out_w], out))
}

/// Gradient of a conv2d output with respect to its input: the transposed
/// convolution of `grad_out` with `weight`, honoring stride and padding.
/// Contributions that would land in the padding are dropped.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    weight: &Tensor,
    input_shape: [usize; 3],
    params: ConvParams,
) -> Result<Tensor> {
    let [in_c, in_h, in_w] = input_shape;
    let [out_c, w_in, kh, kw] = weight.shape()[..] else {
        return Err(Error::shape(format!(
            "conv weight must be O×I×KH×KW, got {:?}",
            weight.shape()
        )));
    };
    if w_in != in_c {
        return Err(Error::shape(format!(
            "input has {in_c} channels but weight {:?} expects I={w_in}",
            weight.shape()
        )));
    }
    let out_h = params.output_dim(in_h, kh)?;
    let out_w = params.output_dim(in_w, kw)?;
    if grad_out.shape() != [out_c, out_h, out_w] {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match conv output [{out_c}, {out_h}, {out_w}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let wts = weight.data();
    let mut grad_in = vec![0.0f32; in_c * in_h * in_w];

    grad_in
        .par_chunks_mut(in_h * in_w)
        .enumerate()
        .for_each(|(i, dst)| {
            for o in 0..out_c {
                let g_plane = &g[o * out_h * out_w..(o + 1) * out_h * out_w];
                for ky in 0..kh {
                    let (y_lo, y_hi) = valid_range(out_h, in_h, ky, params);
                    for kx in 0..kw {
                        let wv = wts[((o * in_c + i) * kh + ky) * kw + kx];
                        let (x_lo, x_hi) = valid_range(out_w, in_w, kx, params);
                        for y in y_lo..y_hi {
                            let iy = y * params.stride + ky - params.padding;
                            for x in x_lo..x_hi {
                                let ix = x * params.stride + kx - params.padding;
                                dst[iy * in_w + ix] += wv * g_plane[y * out_w + x];
                            }
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_parts_unchecked(input_shape.to_vec(), grad_in))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// 2×2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, ArgmaxRecord)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool 2×2/2 needs even spatial dims, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        Tensor::from_parts_unchecked(vec![c, oh, ow], out),
        ArgmaxRecord {
            input_shape: [c, h, w],
            indices,
        },
    ))
}

/// Routes each upstream gradient to the recorded argmax input position,
/// accumulating on collisions.
pub fn maxpool2d_input_grad(grad_out: &Tensor, record: &ArgmaxRecord) -> Result<Tensor> {
    if grad_out.len() != record.indices.len() {
        return Err(Error::shape(format!(
            "upstream gradient has {} elements, argmax record has {}",
            grad_out.len(),
            record.indices.len()
        )));
    }
    let [c, h, w] = record.input_shape;
    let mut grad_in = vec![0.0f32; c * h * w];
    for (&idx, &g) in record.indices.iter().zip(grad_out.data()) {
        grad_in[idx] += g;
    }
    Ok(Tensor::from_parts_unchecked(
        record.input_shape.to_vec(),
        grad_in,
    ))
}

/// `out[m] = bias[m] + Σ_n weight[m,n] · in[n]`, summed with `n` ascending.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = weight.shape()[..] else {
        return Err(Error::shape(format!(
            "dense weight must be OUT×IN, got {:?}",
            weight.shape()
        )));
    };
    if input.shape() != [n] {
        return Err(Error::shape(format!(
            "dense input {:?} does not match weight IN={n}",
            input.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(format!(
            "dense bias {:?} does not match weight OUT={m}",
            bias.shape()
        )));
    }
    let x = input.data();
    let out: Vec<f32> = weight
        .data()
        .par_chunks(n)
        .zip(bias.data().par_iter())
        .map(|(row, &b)| {
            let mut acc = 0.0f32;
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            b + acc
        })
        .collect();
    Ok(Tensor::from_parts_unchecked(vec![m], out))
}

/// `grad_in[n] = Σ_m weight[m,n] · grad_out[m]`, summed with `m` ascending.
pub fn dense_input_grad(grad_out: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let [m, n] = weight.shape()[..] else {
        return Err(Error::shape(format!(
            "dense weight must be OUT×IN, got {:?}",
            weight.shape()
        )));
    };
    if grad_out.shape() != [m] {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match weight OUT={m}",
            grad_out.shape()
        )));
    }
    let mut grad_in = vec![0.0f32; n];
    for (row, &g) in weight.data().chunks(n).zip(grad_out.data()) {
        if g == 0.0 {
            continue;
        }
        for (dst, &wv) in grad_in.iter_mut().zip(row) {
            *dst += wv * g;
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n], grad_in))
}

/// Numerically stable softmax over a rank-1 tensor, evaluated in f64.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::shape(format!(
            "softmax expects a rank-1 tensor, got {:?}",
            logits.shape()
        )));
    }
    let max = logits.max() as f64;
    let exps: Vec<f64> = logits
        .data()
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    let out = exps.iter().map(|&e| (e / sum) as f32).collect();
    Ok(Tensor::from_parts_unchecked(logits.shape().to_vec(), out))
}

/// Bilinear resize of every channel of a C×h×w tensor with half-pixel
/// centers: `sx = (x + 0.5)·w/out_w − 0.5`, clamped to `[0, w−1]`.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}×{out_w} must be positive"
        )));
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        (0..out_len)
            .map(|o| {
                let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5)
                    .clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let src = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
                let bottom = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
                out.push(((1.0 - fy) * top + fy * bottom) as f32);
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![c, out_h, out_w], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{self, oracle};
    use proptest::prelude::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn conv_identity_kernel() {
        let out = conv2d(
            &t(&[1, 1, 1], &[2.0]),
            &t(&[1, 1, 1, 1], &[1.0]),
            &t(&[1], &[0.0]),
            ConvParams::default(),
        )
        .unwrap();
        assert_eq!(out, t(&[1, 1, 1], &[2.0]));
    }

    #[test]
    fn conv_one_by_one_is_affine() {
        let input = Tensor::from_fn(vec![1, 3, 3], |i| (i + 1) as f32).unwrap();
        let out = conv2d(
            &input,
            &t(&[1, 1, 1, 1], &[2.0]),
            &t(&[1], &[1.0]),
            ConvParams::default(),
        )
        .unwrap();
        let expected: Vec<f32> = (1..=9).map(|v| 2.0 * v as f32 + 1.0).collect();
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn conv_matches_direct_oracle_padded() {
        let mut rng = StdRng::seed_from_u64(7);
        let input = testing::random_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
        let weight = testing::random_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let bias = testing::random_tensor(&mut rng, &[3], -1.0, 1.0);
        let p = ConvParams::new(1, 1).unwrap();
        let fast = conv2d(&input, &weight, &bias, p).unwrap();
        let slow = oracle::conv2d_direct(&input, &weight, &bias, 1, 1);
        assert!(max_abs_diff(&fast, &slow) <= 1e-5);
    }

    #[test]
    fn conv_strided_matches_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        for (stride, pad) in [(2, 0), (2, 1), (3, 2), (1, 2)] {
            let input = testing::random_tensor(&mut rng, &[3, 7, 6], -1.0, 1.0);
            let weight = testing::random_tensor(&mut rng, &[2, 3, 3, 2], -1.0, 1.0);
            let bias = testing::random_tensor(&mut rng, &[2], -1.0, 1.0);
            let fast = conv2d(
                &input,
                &weight,
                &bias,
                ConvParams::new(stride, pad).unwrap(),
            )
            .unwrap();
            let slow = oracle::conv2d_direct(&input, &weight, &bias, stride, pad);
            assert!(
                max_abs_diff(&fast, &slow) <= 1e-5,
                "stride {stride} pad {pad}"
            );
        }
    }

    #[test]
    fn conv_shape_errors() {
        let input = Tensor::zeros(vec![2, 4, 4]).unwrap();
        let weight = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
        let bias = Tensor::zeros(vec![1]).unwrap();
        let err = conv2d(&input, &weight, &bias, ConvParams::default()).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");

        let weight = Tensor::zeros(vec![1, 2, 3, 3]).unwrap();
        let bad_bias = Tensor::zeros(vec![2]).unwrap();
        assert!(conv2d(&input, &weight, &bad_bias, ConvParams::default()).is_err());

        let big = Tensor::zeros(vec![1, 2, 5, 5]).unwrap();
        assert!(conv2d(&input, &big, &bias, ConvParams::default()).is_err());
    }

    #[test]
    fn conv_input_grad_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> for bias-free conv
        let mut rng = StdRng::seed_from_u64(3);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
            let x = testing::random_tensor(&mut rng, &[2, 6, 5], -1.0, 1.0);
            let w = testing::random_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
            let zero = Tensor::zeros(vec![3]).unwrap();
            let p = ConvParams::new(stride, pad).unwrap();
            let y = conv2d(&x, &w, &zero, p).unwrap();
            let g = testing::random_tensor(&mut rng, y.shape(), -1.0, 1.0);
            let gx = conv2d_input_grad(&g, &w, [2, 6, 5], p).unwrap();
            let lhs: f64 = y
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| (a * b) as f64)
                .sum();
            let rhs: f64 = x
                .data()
                .iter()
                .zip(gx.data())
                .map(|(a, b)| (a * b) as f64)
                .sum();
            assert!(
                (lhs - rhs).abs() < 1e-4,
                "stride {stride} pad {pad}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(vec![2, 3], -0.5).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_single_window() {
        let (out, rec) = maxpool2d(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(rec.indices, vec![3]);
    }

    #[test]
    fn maxpool_constant_picks_top_left() {
        let (out, rec) = maxpool2d(&Tensor::full(vec![2, 4, 4], 5.0).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
        assert_eq!(rec.indices, vec![0, 2, 8, 10, 16, 18, 24, 26]);
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = StdRng::seed_from_u64(5);
        let input = testing::random_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
        let (out, rec) = maxpool2d(&input).unwrap();
        let (expected, expected_idx) = oracle::maxpool_scan(&input);
        assert_eq!(out, expected);
        assert_eq!(rec.indices, expected_idx);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2d(&Tensor::zeros(vec![1, 3, 4]).unwrap()).is_err());
        assert!(maxpool2d(&Tensor::zeros(vec![1, 4, 5]).unwrap()).is_err());
    }

    #[test]
    fn dense_examples() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = dense(&t(&[2], &[3.0, 5.0]), &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);

        let zero = Tensor::zeros(vec![2, 3]).unwrap();
        let out = dense(&t(&[3], &[1.0, 2.0, 3.0]), &zero, &t(&[2], &[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        let x = testing::random_tensor(&mut rng, &[6], -1.0, 1.0);
        let w = testing::random_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        let b = testing::random_tensor(&mut rng, &[4], -1.0, 1.0);
        let out = dense(&x, &w, &b).unwrap();
        assert!(max_abs_diff(&out, &oracle::dense_loop(&x, &w, &b)) <= 1e-6);
    }

    #[test]
    fn dense_shape_mismatch() {
        let w = Tensor::zeros(vec![2, 3]).unwrap();
        assert!(dense(
            &Tensor::zeros(vec![4]).unwrap(),
            &w,
            &Tensor::zeros(vec![2]).unwrap()
        )
        .is_err());
        assert!(dense(
            &Tensor::zeros(vec![3]).unwrap(),
            &w,
            &Tensor::zeros(vec![3]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::zeros(vec![4]).unwrap()).unwrap();
        for &p in u.data() {
            assert!((p - 0.25).abs() <= 1e-6);
        }
        let p = softmax(&t(&[2], &[0.0, 3f32.ln()])).unwrap();
        assert!((p.data()[0] - 0.25).abs() <= 1e-6);
        assert!((p.data()[1] - 0.75).abs() <= 1e-6);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = testing::random_tensor(&mut rng, &[1, 5, 3], -2.0, 2.0);
        assert!(max_abs_diff(&bilinear_resize(&x, 5, 3).unwrap(), &x) <= 1e-6);

        let seven = bilinear_resize(&t(&[1, 1, 1], &[7.0]), 4, 6).unwrap();
        assert_eq!(seven.shape(), &[1, 4, 6]);
        assert!(seven.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn resize_matches_scalar_oracle() {
        let x = t(&[1, 2, 2], &[0.0, 1.0, 2.0, 3.0]);
        let out = bilinear_resize(&x, 4, 4).unwrap();
        // corners clamp, interior uses quarter-pixel offsets
        let frozen = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        assert_eq!(out.data(), &frozen);
        let scalar = oracle::bilinear_scalar(&x, 4, 4);
        assert!(max_abs_diff(&out, &scalar) <= 1e-6);
    }

    fn small_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
        let len = shape.iter().product::<usize>();
        prop::collection::vec(-10.0f32..10.0, len)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(x in small_tensor(vec![3, 4])) {
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }

        #[test]
        fn softmax_properties(x in small_tensor(vec![7]), c in -50.0f32..50.0) {
            let p = softmax(&x).unwrap();
            let sum: f64 = p.data().iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(p.data().iter().all(|&v| v >= 0.0));
            prop_assert_eq!(p.argmax(), x.argmax());
            let shifted = softmax(&x.map(|v| v + c)).unwrap();
            for (a, b) in p.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn resize_stays_within_bounds(
            x in small_tensor(vec![1, 3, 5]),
            oh in 1usize..12,
            ow in 1usize..12,
        ) {
            let out = bilinear_resize(&x, oh, ow).unwrap();
            let (lo, hi) = (x.min(), x.max());
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }

        #[test]
        fn maxpool_dominates_window(x in small_tensor(vec![2, 4, 6])) {
            let (out, rec) = maxpool2d(&x).unwrap();
            for (k, (&v, &idx)) in out.data().iter().zip(&rec.indices).enumerate() {
                prop_assert_eq!(x.data()[idx], v);
                let (c, rest) = (k / 6, k % 6);
                let (y, xx) = (rest / 3, rest % 3);
                for dy in 0..2 {
                    for dx in 0..2 {
                        prop_assert!(v >= x.get(&[c, 2 * y + dy, 2 * xx + dx]).unwrap());
                    }
                }
            }
        }

        #[test]
        fn conv_is_linear_without_bias(
            x in small_tensor(vec![2, 5, 5]),
            w in small_tensor(vec![2, 2, 3, 3]),
            a in 0.5f32..2.0,
        ) {
            let zero = Tensor::zeros(vec![2]).unwrap();
            let p = ConvParams::new(1, 1).unwrap();
            let lhs = conv2d(&x.scale(a), &w, &zero, p).unwrap();
            let rhs = conv2d(&x, &w, &zero, p).unwrap().scale(a);
            let scale = rhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() <= 1e-4 * scale);
            }
        }

        #[test]
        fn maxpool_grad_conserves_mass(x in small_tensor(vec![2, 4, 4]), g in small_tensor(vec![2, 2, 2])) {
            let (_, rec) = maxpool2d(&x).unwrap();
            let gi = maxpool2d_input_grad(&g, &rec).unwrap();
            let a: f64 = g.data().iter().map(|&v| v as f64).sum();
            let b: f64 = gi.data().iter().map(|&v| v as f64).sum();
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn kernels_are_bit_identical_across_pools() {
        let mut rng = StdRng::seed_from_u64(21);
        let x = testing::random_tensor(&mut rng, &[4, 12, 12], -1.0, 1.0);
        let w = testing::random_tensor(&mut rng, &[8, 4, 3, 3], -1.0, 1.0);
        let b = testing::random_tensor(&mut rng, &[8], -1.0, 1.0);
        let p = ConvParams::new(1, 1).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| conv2d(&x, &w, &b, p).unwrap())
        };
        let one = run(1);
        assert_eq!(one.data(), run(4).data());
        assert_eq!(one.data(), run(3).data());
    }
}
