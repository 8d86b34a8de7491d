use std::fs;
use std::path::Path;

use crate::scalar::Real;

use super::types::{BinaryMask, Image};
use super::ImageError;

/// Loads a binary portable pixmap (P6, 3-channel) or graymap (P5,
/// 1-channel). Values are normalized by the file's maxval into `[0,1]`;
/// maxval above 255 (16-bit) is unsupported.
pub fn load_image<T: Real>(path: &Path) -> Result<Image<T>, ImageError> {
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    let (magic, width, height, maxval, raster) = parse_pnm(path, &bytes)?;
    let channels = match magic {
        b'6' => 3,
        b'5' => 1,
        other => {
            return Err(ImageError::format(
                path,
                format!("unsupported format P{}", other as char),
            ))
        }
    };
    let want = width * height * channels;
    if raster.len() < want {
        return Err(ImageError::format(
            path,
            format!("raster has {} bytes, header promises {want}", raster.len()),
        ));
    }
    let scale = 1.0 / maxval as f64;
    let pixels = raster[..want].iter().map(|&b| T::of(b as f64 * scale)).collect();
    Image::new(width, height, channels, pixels)
}

/// Saves an image as P6 (3-channel) or P5 (1-channel) with maxval 255;
/// pixels are quantized by rounding.
pub fn save_image<T: Real>(image: &Image<T>, path: &Path) -> Result<(), ImageError> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|v| quantize(*v)));
    fs::write(path, out).map_err(|e| ImageError::io(path, e))
}

/// Loads a P5 graymap as a binary mask. The file must be two-valued: 0 for
/// background and maxval for foreground; anything else is rejected rather
/// than silently thresholded.
pub fn load_mask(path: &Path) -> Result<BinaryMask, ImageError> {
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    let (magic, width, height, maxval, raster) = parse_pnm(path, &bytes)?;
    if magic != b'5' {
        return Err(ImageError::format(path, "mask must be a P5 graymap"));
    }
    let want = width * height;
    if raster.len() < want {
        return Err(ImageError::format(
            path,
            format!("raster has {} bytes, header promises {want}", raster.len()),
        ));
    }
    let mut values = Vec::with_capacity(want);
    for &b in &raster[..want] {
        values.push(match b {
            0 => 0,
            v if v as usize == maxval => 1,
            v => {
                return Err(ImageError::format(
                    path,
                    format!("mask value {v} is neither 0 nor {maxval}"),
                ))
            }
        });
    }
    BinaryMask::new(width, height, values)
}

/// Saves a mask as P5 with foreground at 255.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), ImageError> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.values().iter().map(|&v| if v == 1 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| ImageError::io(path, e))
}

fn quantize<T: Real>(v: T) -> u8 {
    let scaled = (v.as_f64() * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Splits a PNM file into (format digit, width, height, maxval, raster).
fn parse_pnm<'a>(
    path: &Path,
    bytes: &'a [u8],
) -> Result<(u8, usize, usize, usize, &'a [u8]), ImageError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImageError::format(path, "not a PNM file"));
    }
    let magic = bytes[1];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_header_int(path, bytes, &mut pos)?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::format(path, "missing raster separator"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImageError::format(path, format!("bad dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::format(
            path,
            format!("unsupported bit depth (maxval {maxval})"),
        ));
    }
    Ok((magic, width, height, maxval, &bytes[pos..]))
}

fn next_header_int(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize, ImageError> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(ImageError::format(path, "malformed header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("digits are UTF-8")
        .parse()
        .map_err(|_| ImageError::format(path, "header value out of range"))
}
