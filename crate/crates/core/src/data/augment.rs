//! Training-time image augmentation: rotation, crop-resize, horizontal flip
//! and grayscale conversion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::{clip01, Image, LUMA};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AugmentOp {
    /// Uniform angle in `[-max_degrees, max_degrees]`, bilinear, zero padded.
    Rotate {
        max_degrees: f64,
    },
    /// Square-aspect crop of side fraction in `[min_fraction, 1]`, resized back.
    CropResize {
        min_fraction: f64,
    },
    HorizontalFlip {
        probability: f64,
    },
    Grayscale {
        probability: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub ops: Vec<AugmentOp>,
}

impl AugmentationSpec {
    /// Mild defaults for glyph imagery.
    pub fn standard() -> Self {
        AugmentationSpec {
            ops: vec![
                AugmentOp::Rotate { max_degrees: 8.0 },
                AugmentOp::CropResize { min_fraction: 0.9 },
                AugmentOp::HorizontalFlip { probability: 0.5 },
                AugmentOp::Grayscale { probability: 0.1 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            match *op {
                AugmentOp::Rotate { max_degrees }
                    if !(max_degrees >= 0.0 && max_degrees.is_finite()) =>
                {
                    return Err(Error::Config(format!(
                        "rotate max_degrees {max_degrees} must be >= 0"
                    )))
                }
                AugmentOp::CropResize { min_fraction }
                    if !(min_fraction > 0.0 && min_fraction <= 1.0) =>
                {
                    return Err(Error::Config(format!(
                        "crop min_fraction {min_fraction} must lie in (0, 1]"
                    )))
                }
                AugmentOp::HorizontalFlip { probability }
                | AugmentOp::Grayscale { probability }
                    if !(0.0..=1.0).contains(&probability) =>
                {
                    return Err(Error::Config(format!(
                        "probability {probability} must lie in [0, 1]"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Applies the ops in order. Output has the input's dimensions.
pub fn augment(image: &Image, spec: &AugmentationSpec, rng: &mut impl Rng) -> Image {
    let mut img = image.clone();
    for op in &spec.ops {
        img = match *op {
            AugmentOp::Rotate { max_degrees } => {
                let angle = rng::uniform(rng, -max_degrees, max_degrees);
                rotate(&img, angle)
            }
            AugmentOp::CropResize { min_fraction } => {
                let f = rng::uniform(rng, min_fraction, 1.0);
                let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
                crop_resize(&img, f, u, v)
            }
            AugmentOp::HorizontalFlip { probability } => {
                if rng.random::<f64>() < probability {
                    flip_horizontal(&img)
                } else {
                    img
                }
            }
            AugmentOp::Grayscale { probability } => {
                if rng.random::<f64>() < probability {
                    grayscale(&img)
                } else {
                    img
                }
            }
        };
    }
    img
}

pub fn flip_horizontal(image: &Image) -> Image {
    let (h, w, c) = image.dims();
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for r in 0..h {
        for col in (0..w).rev() {
            let at = (r * w + col) * c;
            data.extend_from_slice(&src[at..at + c]);
        }
    }
    Image::new(h, w, c, data).expect("same dims and values")
}

/// Replaces every channel by the pixel luma; one-channel images are unchanged.
pub fn grayscale(image: &Image) -> Image {
    let (h, w, c) = image.dims();
    if c == 1 {
        return image.clone();
    }
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            let y = clip01(LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]);
            [y, y, y]
        })
        .collect();
    Image::new(h, w, c, data).expect("luma is clipped")
}

/// Bilinear sample at fractional `(y, x)`; outside the frame reads as zero.
fn sample_zero_padded(image: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let (h, w, _) = image.dims();
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if wy * wx == 0.0 || yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                continue;
            }
            acc += wy * wx * image.get(yy as usize, xx as usize, ch);
        }
    }
    acc
}

/// Bilinear sample with coordinates clamped to the frame.
fn sample_clamped(image: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let (h, w, _) = image.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let top = image.get(y0, x0, ch) * (1.0 - tx) + image.get(y0, x1, ch) * tx;
    let bottom = image.get(y1, x0, ch) * (1.0 - tx) + image.get(y1, x1, ch) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Rotates about the image centre by `degrees` (counter-clockwise on screen).
pub fn rotate(image: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return image.clone();
    }
    let (h, w, c) = image.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut data = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let (dy, dx) = (r as f64 - cy, col as f64 - cx);
            // inverse map: output pixel -> source location
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            for ch in 0..c {
                data.push(clip01(sample_zero_padded(image, sy, sx, ch)));
            }
        }
    }
    Image::new(h, w, c, data).expect("clipped values")
}

/// Crops a window of side `fraction` (relative) whose origin sits at relative
/// position `(u, v)` of the free range, then resizes it back to full size.
pub fn crop_resize(image: &Image, fraction: f64, u: f64, v: f64) -> Image {
    if fraction >= 1.0 {
        return image.clone();
    }
    let (h, w, c) = image.dims();
    let (ch_, cw) = (fraction * h as f64, fraction * w as f64);
    let (oy, ox) = (v * (h as f64 - ch_), u * (w as f64 - cw));
    let mut data = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let sy = oy + (r as f64 + 0.5) * ch_ / h as f64 - 0.5;
            let sx = ox + (col as f64 + 0.5) * cw / w as f64 - 0.5;
            for k in 0..c {
                data.push(clip01(sample_clamped(image, sy, sx, k)));
            }
        }
    }
    Image::new(h, w, c, data).expect("clipped values")
}
