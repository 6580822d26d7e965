use super::RgbImage;
use crate::analysis::dead_channels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Solid tile color for channels that never fire.
pub const DEAD_TINT: [u8; 3] = [0, 0, 200];
pub const GRID_SEPARATOR: [u8; 3] = [255, 255, 255];
/// Fill for unused cells in the last grid row.
pub const GRID_BACKGROUND: [u8; 3] = [255, 255, 255];
pub const SEPARATOR_PX: usize = 2;
/// Tiles are upscaled by an integer factor until the shorter side reaches this.
pub const MIN_TILE_SIDE: usize = 64;

fn plane_dims(act: &Tensor) -> Result<(usize, usize)> {
    match act.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        other => Err(Error::shape(format!(
            "expected an H×W or 1×H×W channel, got {other:?}"
        ))),
    }
}

fn upscale_factor(h: usize, w: usize) -> usize {
    MIN_TILE_SIDE.div_ceil(h.min(w)).max(1)
}

/// Min–max scaled gray values of one plane; constant planes are mid-gray.
fn gray_levels(plane: &[f32]) -> Vec<u8> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if hi <= lo {
        return vec![128; plane.len()];
    }
    plane
        .iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

fn draw_tile(
    canvas: &mut RgbImage,
    left: usize,
    top: usize,
    h: usize,
    w: usize,
    factor: usize,
    color_of: impl Fn(usize) -> [u8; 3],
) {
    for y in 0..h * factor {
        for x in 0..w * factor {
            canvas.put(left + x, top + y, color_of((y / factor) * w + x / factor));
        }
    }
}

/// Renders one activation channel as a grayscale tile, nearest-neighbor
/// upscaled by an integer factor so the shorter side is at least 64 px.
pub fn channel_to_grayscale(act: &Tensor) -> Result<RgbImage> {
    let (h, w) = plane_dims(act)?;
    let grays = gray_levels(act.data());
    let f = upscale_factor(h, w);
    let mut img = RgbImage::filled(w * f, h * f, [0, 0, 0]);
    draw_tile(&mut img, 0, 0, h, w, f, |i| [grays[i]; 3]);
    Ok(img)
}

/// Lays out every channel of a K×H×W activation as tiles, row-major in
/// channel order, with 2-px separators around and between tiles. Channels
/// whose maximum is `≤ dead_eps` are filled with [`DEAD_TINT`].
pub fn channel_grid(act: &Tensor, dead_eps: f64, cols: usize) -> Result<RgbImage> {
    if cols == 0 {
        return Err(Error::InvalidArgument(
            "grid needs at least one column".into(),
        ));
    }
    let (k, h, w) = act.chw()?;
    let f = upscale_factor(h, w);
    let (tile_w, tile_h) = (w * f, h * f);
    let rows = k.div_ceil(cols);
    let width = cols * tile_w + (cols + 1) * SEPARATOR_PX;
    let height = rows * tile_h + (rows + 1) * SEPARATOR_PX;
    let mut img = RgbImage::filled(width, height, GRID_SEPARATOR);
    let dead = dead_channels(act, dead_eps)?;

    for cell in 0..rows * cols {
        let left = SEPARATOR_PX + (cell % cols) * (tile_w + SEPARATOR_PX);
        let top = SEPARATOR_PX + (cell / cols) * (tile_h + SEPARATOR_PX);
        if cell >= k {
            draw_tile(&mut img, left, top, h, w, f, |_| GRID_BACKGROUND);
        } else if dead.binary_search(&cell).is_ok() {
            draw_tile(&mut img, left, top, h, w, f, |_| DEAD_TINT);
        } else {
            let grays = gray_levels(act.channel(cell)?);
            draw_tile(&mut img, left, top, h, w, f, |i| [grays[i]; 3]);
        }
    }
    Ok(img)
}

/// Jet colormap: red at 1, cyan-blue toward 0.
/// `r = clamp(1.5 − |4v − 3|)`, `g = clamp(1.5 − |4v − 2|)`,
/// `b = clamp(1.5 − |4v − 1|)`, each scaled to 0–255 rounding half up.
pub fn jet_colormap(v: f32) -> [u8; 3] {
    let v = if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0) as f64
    };
    let channel = |center: f64| {
        let c = (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
        (c * 255.0 + 0.5).floor() as u8
    };
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// `out = (1 − blend)·img + blend·jet(heatmap)` per channel, rounded.
pub fn render_overlay(img: &RgbImage, heatmap: &Tensor, blend: f32) -> Result<RgbImage> {
    let (h, w) = plane_dims(heatmap)?;
    if (h, w) != (img.height(), img.width()) {
        return Err(Error::shape(format!(
            "heatmap is {h}×{w} but image is {}×{}",
            img.height(),
            img.width()
        )));
    }
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::InvalidArgument(format!(
            "blend {blend} outside [0, 1]"
        )));
    }
    let b = blend as f64;
    let heat = heatmap.data();
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let base = img.get(x, y);
        let color = jet_colormap(heat[y * w + x]);
        [0, 1, 2].map(|c| ((1.0 - b) * base[c] as f64 + b * color[c] as f64).round() as u8)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    #[test]
    fn grayscale_levels_and_upscale() {
        let ch = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let img = channel_to_grayscale(&ch).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert_eq!(img.get(0, 0), [0; 3]);
        assert_eq!(img.get(63, 0), [85; 3]);
        assert_eq!(img.get(0, 63), [170; 3]);
        assert_eq!(img.get(63, 63), [255; 3]);
        assert_eq!(img.get(31, 31), [0; 3]);
        assert_eq!(img.get(32, 31), [85; 3]);
    }

    #[test]
    fn constant_channel_is_mid_gray() {
        let ch = Tensor::full(vec![1, 3, 5], 4.2).unwrap();
        let img = channel_to_grayscale(&ch).unwrap();
        // shorter side 3 → factor 22
        assert_eq!((img.width(), img.height()), (110, 66));
        assert!(img.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn random_channel_spans_full_range() {
        let mut rng = StdRng::seed_from_u64(0);
        let ch = Tensor::from_fn(vec![7, 9], |_| rng.gen_range(-3.0..3.0)).unwrap();
        let img = channel_to_grayscale(&ch).unwrap();
        let f = 10; // ceil(64/7)
        let min_at = ch.data().iter().position(|&v| v == ch.min()).unwrap();
        let max_at = ch.argmax();
        assert_eq!(img.get((min_at % 9) * f, (min_at / 9) * f), [0; 3]);
        assert_eq!(img.get((max_at % 9) * f, (max_at / 9) * f), [255; 3]);
        assert_eq!(*img.pixels().iter().min().unwrap(), 0);
        assert_eq!(*img.pixels().iter().max().unwrap(), 255);
    }

    #[test]
    fn grid_layout_arithmetic() {
        let act = Tensor::from_fn(vec![4, 8, 8], |i| (i % 7) as f32).unwrap();
        let img = channel_grid(&act, 1e-6, 2).unwrap();
        assert_eq!(img.width(), 2 * 64 + 3 * SEPARATOR_PX);
        assert_eq!(img.height(), 2 * 64 + 3 * SEPARATOR_PX);
        assert_eq!(img.get(0, 0), GRID_SEPARATOR);
        assert_eq!(img.get(66, 10), GRID_SEPARATOR);
    }

    #[test]
    fn all_zero_grid_is_blue() {
        let act = Tensor::zeros(vec![5, 4, 4]).unwrap();
        let img = channel_grid(&act, 1e-6, 3).unwrap();
        for k in 0..5 {
            let left = SEPARATOR_PX + (k % 3) * (64 + SEPARATOR_PX);
            let top = SEPARATOR_PX + (k / 3) * (64 + SEPARATOR_PX);
            assert_eq!(img.get(left + 5, top + 5), DEAD_TINT);
        }
        // sixth cell is empty background, not a tile
        let left = SEPARATOR_PX + 2 * (64 + SEPARATOR_PX);
        let top = SEPARATOR_PX + 64 + SEPARATOR_PX;
        assert_eq!(img.get(left + 5, top + 5), GRID_BACKGROUND);
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet_colormap(1.0), [128, 0, 0]);
        assert_eq!(jet_colormap(0.25), [0, 128, 255]);
        assert_eq!(jet_colormap(0.5), [128, 255, 128]);
        assert_eq!(jet_colormap(0.0), [0, 0, 128]);
        assert_eq!(jet_colormap(7.0), jet_colormap(1.0));
        assert_eq!(jet_colormap(-1.0), jet_colormap(0.0));
    }

    #[test]
    fn jet_is_monotone_in_the_right_places() {
        let samples: Vec<[u8; 3]> = (0..=1000)
            .map(|i| jet_colormap(i as f32 / 1000.0))
            .collect();
        for w in samples[..=750].windows(2) {
            assert!(w[1][0] >= w[0][0], "red rises up to 0.75");
        }
        for w in samples[375..].windows(2) {
            assert!(w[1][2] <= w[0][2], "blue falls from 0.375");
        }
        assert!(samples[875..].windows(2).all(|w| w[1][0] <= w[0][0]));
    }

    #[test]
    fn overlay_blend_endpoints() {
        let mut rng = StdRng::seed_from_u64(3);
        let img = RgbImage::from_fn(4, 3, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let heat = Tensor::from_fn(vec![1, 3, 4], |i| i as f32 / 11.0).unwrap();
        assert_eq!(render_overlay(&img, &heat, 0.0).unwrap(), img);
        let pure = render_overlay(&img, &heat, 1.0).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(pure.get(x, y), jet_colormap(heat.data()[y * 4 + x]));
            }
        }
    }

    #[test]
    fn overlay_half_blend_is_mean() {
        let img = RgbImage::filled(1, 1, [100, 51, 0]);
        let heat = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let out = render_overlay(&img, &heat, 0.5).unwrap();
        // jet(1) = (128, 0, 0)
        let expected = [114.0f32, 25.5, 0.0];
        for (got, want) in out.get(0, 0).iter().zip(expected) {
            assert!((*got as f32 - want).abs() <= 1.0);
        }
    }

    #[test]
    fn overlay_rejects_mismatch() {
        let img = RgbImage::filled(2, 2, [0, 0, 0]);
        assert!(render_overlay(&img, &Tensor::zeros(vec![1, 2, 3]).unwrap(), 0.5).is_err());
        assert!(render_overlay(&img, &Tensor::zeros(vec![1, 2, 2]).unwrap(), 1.5).is_err());
    }
}
