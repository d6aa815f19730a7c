//! PNG and binary PGM/PPM reading, 8-bit PNG writing.

use std::fs;
use std::path::Path;

use bcpnet_core::RasterImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: file not found")]
    Missing { path: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported format ({reason})")]
    Unsupported { path: String, reason: String },

    #[error("{path}: image has zero width or height")]
    ZeroDimension { path: String },

    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("{path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Reads a PNG (8/16-bit) or binary PGM/PPM and normalizes samples by the
/// format's maximum value.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, IoError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => IoError::Missing { path: name.clone() },
        _ => IoError::Io {
            path: name.clone(),
            source,
        },
    })?;
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes, &name)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(&bytes, &name)
    } else {
        Err(IoError::Unsupported {
            path: name,
            reason: "expected PNG, P5 or P6".into(),
        })
    }
}

fn decode_png(bytes: &[u8], name: &str) -> Result<RasterImage, IoError> {
    use image::DynamicImage as D;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        IoError::Malformed {
            path: name.into(),
            reason: e.to_string(),
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(IoError::ZeroDimension { path: name.into() });
    }
    // alpha is dropped; gray stays single-channel
    let (channels, samples): (usize, Vec<f64>) = match img {
        D::ImageLuma8(_) | D::ImageLumaA8(_) => {
            (1, img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        D::ImageLuma16(_) | D::ImageLumaA16(_) => (
            1,
            img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        ),
        D::ImageRgb8(_) | D::ImageRgba8(_) => {
            (3, img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        D::ImageRgb16(_) | D::ImageRgba16(_) => (
            3,
            img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        ),
        other => {
            return Err(IoError::Unsupported {
                path: name.into(),
                reason: format!("PNG colour type {:?}", other.color()),
            })
        }
    };
    planar(w, h, channels, &samples, name)
}

/// Interleaved samples to a planar image.
fn planar(w: usize, h: usize, channels: usize, interleaved: &[f64], name: &str) -> Result<RasterImage, IoError> {
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    for (k, &v) in interleaved.iter().enumerate() {
        data[(k % channels) * n + k / channels] = v;
    }
    RasterImage::new(w, h, channels, data).map_err(|e| IoError::Malformed {
        path: name.into(),
        reason: e.to_string(),
    })
}

fn decode_pnm(bytes: &[u8], name: &str) -> Result<RasterImage, IoError> {
    let malformed = |reason: &str| IoError::Malformed {
        path: name.into(),
        reason: reason.into(),
    };
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in &mut header {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated PNM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad PNM header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after PNM header"));
    }
    pos += 1;
    let [w, h, maxval] = header;
    if w == 0 || h == 0 {
        return Err(IoError::ZeroDimension { path: name.into() });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed("PNM maxval outside 1..=65535"));
    }
    let wide = maxval > 255;
    let count = w * h * channels;
    let needed = count * if wide { 2 } else { 1 };
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| malformed("truncated PNM raster"))?;
    let scale = maxval as f64;
    let samples: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / scale).min(1.0))
            .collect()
    } else {
        raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    };
    planar(w, h, channels, &samples, name)
}

/// `round(clamp(x, 0, 1) · 255)` with halves rounded up.
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn interleaved_bytes(img: &RasterImage) -> Vec<u8> {
    let n = img.pixel_count();
    let c = img.channels();
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (p, &v) in img.plane(ch).iter().enumerate() {
            out[p * c + ch] = quantize(v);
        }
    }
    out
}

/// Writes an 8-bit grayscale or RGB PNG.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &interleaved_bytes(img),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| match source {
        image::ImageError::IoError(source) => IoError::Io {
            path: path.display().to_string(),
            source,
        },
        source => IoError::Encode {
            path: path.display().to_string(),
            source,
        },
    })
}

/// Writes an 8-bit binary PGM (one channel) or PPM (three channels).
pub fn save_pnm(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(interleaved_bytes(img));
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}
