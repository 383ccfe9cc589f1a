//! Binary PGM (P5) and PPM (P6) reading and writing.
//!
//! Files are written with maxval 255; any maxval up to 65535 is accepted on
//! read (two bytes per sample, big endian, above 255).

use std::path::Path;

use crate::data::image::Image;
use crate::error::{Error, Result};

/// Encodes with 8-bit quantization: `round(v * 255)`.
pub fn encode(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn fail<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::ImageFormat {
        offset,
        message: message.into(),
    })
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return fail(0, "file too short for a netpbm header");
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return fail(0, "expected magic P5 or P6"),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
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
            let name = ["width", "height", "maxval"][i];
            return fail(pos, format!("expected {name}"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = match text.parse() {
            Ok(v) => v,
            Err(_) => return fail(start, format!("number {text} out of range")),
        };
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return fail(pos, "expected single whitespace before raster"),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return fail(2, "zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        return fail(2, format!("maxval {maxval} outside 1..=65535"));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        data_start: pos,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let samples = h.width * h.height * h.channels;
    let bps = if h.maxval > 255 { 2 } else { 1 };
    let raster = &bytes[h.data_start..];
    if raster.len() < samples * bps {
        return fail(
            bytes.len(),
            format!(
                "raster truncated: need {} bytes, have {}",
                samples * bps,
                raster.len()
            ),
        );
    }
    let max = h.maxval as f64;
    let mut data = Vec::with_capacity(samples);
    for i in 0..samples {
        let raw = if bps == 1 {
            raster[i] as usize
        } else {
            ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
        };
        if raw > h.maxval {
            return fail(
                h.data_start + i * bps,
                format!("sample {raw} exceeds maxval {}", h.maxval),
            );
        }
        data.push(raw as f64 / max);
    }
    Image::new(h.height, h.width, h.channels, data)
}

pub fn write(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(image)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Tiles equally sized images into one grid image, `columns` wide, separated
/// by a one-pixel gutter of value `gutter`.
pub fn contact_sheet(images: &[Image], columns: usize, gutter: f64) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dataset("contact sheet needs at least one image".into()))?;
    let (h, w, c) = first.dims();
    if images.iter().any(|i| i.dims() != (h, w, c)) {
        return Err(Error::Shape("contact sheet images differ in size".into()));
    }
    let columns = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(columns);
    let sheet_h = rows * h + rows.saturating_sub(1);
    let sheet_w = columns * w + columns.saturating_sub(1);
    let mut data = vec![gutter; sheet_h * sheet_w * c];
    for (idx, img) in images.iter().enumerate() {
        let (gr, gc) = (idx / columns, idx % columns);
        let (oy, ox) = (gr * (h + 1), gc * (w + 1));
        for r in 0..h {
            let src = &img.data()[r * w * c..(r + 1) * w * c];
            let start = ((oy + r) * sheet_w + ox) * c;
            data[start..start + w * c].copy_from_slice(src);
        }
    }
    Image::from_clipped(sheet_h, sheet_w, c, data)
}
