use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use super::RgbImage;
use crate::error::{Error, Result};

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Reads a PNG (8-bit RGB or RGBA, alpha dropped) or binary PPM (P6,
/// maxval 255).
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_image(&bytes).map_err(|e| match e {
        Error::ImageFormat(msg) => Error::ImageFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && (b'1'..=b'7').contains(&bytes[1]) {
        Err(Error::ImageFormat(format!(
            "PNM variant P{} is not supported (only binary RGB P6)",
            bytes[1] as char
        )))
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Err(Error::ImageFormat(
            "JPEG is not supported; convert to PNG or PPM".into(),
        ))
    } else {
        Err(Error::ImageFormat(
            "unrecognized format (expected PNG or PPM P6)".into(),
        ))
    }
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let png_err = |e: png::DecodingError| Error::ImageFormat(format!("PNG: {e}"));
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::ImageFormat("PNG: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ImageFormat(format!(
            "PNG bit depth {:?} is not supported (8-bit only)",
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = match info.color_type {
        png::ColorType::Rgb => {
            let mut px = Vec::with_capacity(w * h * 3);
            for row in buf.chunks(info.line_size).take(h) {
                px.extend_from_slice(&row[..w * 3]);
            }
            px
        }
        png::ColorType::Rgba => {
            let mut px = Vec::with_capacity(w * h * 3);
            for row in buf.chunks(info.line_size).take(h) {
                for p in row[..w * 4].chunks_exact(4) {
                    px.extend_from_slice(&p[..3]);
                }
            }
            px
        }
        other => {
            return Err(Error::ImageFormat(format!(
                "PNG color type {other:?} is not supported (RGB or RGBA only)"
            )))
        }
    };
    RgbImage::new(w, h, pixels)
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::ImageFormat("PPM header truncated".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::ImageFormat(
                "PPM header has a non-numeric field".into(),
            ));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat("PPM header field out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::ImageFormat("PPM header truncated".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!(
            "PPM maxval {maxval} is not supported (8-bit, maxval 255 only)"
        )));
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::ImageFormat("PPM dimensions too large".into()))?;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(Error::ImageFormat(format!(
            "PPM truncated: {} of {need} pixel bytes",
            data.len()
        )));
    }
    RgbImage::new(w, h, data[..need].to_vec())
}

/// Writes an 8-bit RGB, non-interlaced PNG.
pub fn write_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    encode_png(img, &mut writer)?;
    use std::io::Write;
    writer.flush()?;
    Ok(())
}

pub fn encode_png(img: &RgbImage, out: impl std::io::Write) -> Result<()> {
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other)),
    };
    let mut encoder = png::Encoder::new(out, img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(img.pixels()).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}
