//! 8-bit PNG images and float32 NPY dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pertrender_core::Image;

use crate::error::{Error, Result};

/// Map `[0, 1]` to `0..=255`, clamping out-of-range values.
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// PNG bytes of a 1- (grayscale) or 3-channel (RGB) image.
pub fn encode_png(image: &Image) -> std::result::Result<Vec<u8>, String> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(format!("cannot encode {c} channels as PNG")),
    };
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| e.to_string())?;
    let bytes: Vec<u8> = image.data.iter().map(|&x| quantize(x)).collect();
    writer.write_image_data(&bytes).map_err(|e| e.to_string())?;
    writer.finish().map_err(|e| e.to_string())?;
    Ok(out)
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    let bytes = encode_png(image).map_err(|message| Error::Encode {
        path: path.to_path_buf(),
        message,
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// NPY v1.0 bytes holding the image as little-endian float32 with shape
/// `(height, width)` for one channel and `(height, width, channels)`
/// otherwise.
pub fn encode_npy(image: &Image) -> Vec<u8> {
    let shape = if image.channels == 1 {
        format!("({}, {})", image.height, image.width)
    } else {
        format!("({}, {}, {})", image.height, image.width, image.channels)
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    // Magic (6) + version (2) + length (2) + header + newline, padded to 64.
    let unpadded = 10 + header.len() + 1;
    header.extend(std::iter::repeat_n(' ', unpadded.next_multiple_of(64) - unpadded));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 4 * image.data.len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &x in &image.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn save_npy(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_npy(image))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
