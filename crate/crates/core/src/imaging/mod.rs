//! Image ingestion, preprocessing and rendering of activations and heatmaps.

mod io;
mod render;

pub use io::{decode_image, encode_png, load_image, write_png};
pub use render::{
    channel_grid, channel_to_grayscale, jet_colormap, render_overlay, DEAD_TINT, GRID_BACKGROUND,
    GRID_SEPARATOR, MIN_TILE_SIDE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Tensor};

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dims {width}×{height} must be positive"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} pixel bytes for a {width}×{height} RGB image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "image dims must be positive");
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| color)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Pixel values as a 3×H×W float tensor in RGB order.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32;
            }
        }
        Tensor::from_parts_unchecked(vec![3, self.height, self.width], data)
    }
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}×{})", self.width, self.height)
    }
}

/// Bilinear resize of an image (same sampling as the tensor kernel), rounded
/// back to 8 bits.
pub fn resize_image(img: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if (img.width, img.height) == (width, height) {
        return Ok(img.clone());
    }
    let resized = bilinear_resize(&img.to_tensor(), height, width)?;
    let plane = width * height;
    let data = resized.data();
    Ok(RgbImage::from_fn(width, height, |x, y| {
        let i = y * width + x;
        [0, 1, 2].map(|c| data[c * plane + i].round().clamp(0.0, 255.0) as u8)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelOrder {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "BGR")]
    Bgr,
}

/// How raw pixels become network input. Stored in the weight container so
/// the engine never assumes a particular framework's convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    /// Target `[H, W]`.
    pub resize: [usize; 2],
    pub channel_order: ChannelOrder,
    /// Per output channel, subtracted before scaling.
    pub mean: [f32; 3],
    pub scale: [f32; 3],
}

impl Preprocessing {
    /// Resize only: mean 0, scale 1.
    pub fn identity(height: usize, width: usize, channel_order: ChannelOrder) -> Self {
        Self {
            resize: [height, width],
            channel_order,
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "preprocessing resize {:?} must be positive",
                self.resize
            )));
        }
        if !self.mean.iter().chain(&self.scale).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "preprocessing mean/scale must be finite".into(),
            ));
        }
        if self.scale.contains(&0.0) {
            return Err(Error::InvalidArgument(
                "preprocessing scale must be non-zero".into(),
            ));
        }
        Ok(())
    }
}

/// Resize to the target, reorder channels, then
/// `out[c,y,x] = (pixel_c − mean[c]) · scale[c]`.
pub fn preprocess(img: &RgbImage, p: &Preprocessing) -> Result<Tensor> {
    p.validate()?;
    let [h, w] = p.resize;
    let resized = bilinear_resize(&img.to_tensor(), h, w)?;
    let plane = h * w;
    let src = resized.data();
    let mut out = vec![0.0f32; 3 * plane];
    for c in 0..3 {
        let from = match p.channel_order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        };
        let (mean, scale) = (p.mean[c] as f64, p.scale[c] as f64);
        for (dst, &v) in out[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&src[from * plane..(from + 1) * plane])
        {
            *dst = ((v as f64 - mean) * scale) as f32;
        }
    }
    Tensor::new(vec![3, h, w], out)
}
