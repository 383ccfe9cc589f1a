//! Structural similarity and RMSE.
//!
//! Local statistics use a uniform window with population (1/N) variances.
//! Each window scores
//!
//! ```text
//! ((2 mx my + C1) (2 sxy + C2)) / ((mx^2 + my^2 + C1) (sx^2 + sy^2 + C2))
//! C1 = (K1 L)^2,  C2 = (K2 L)^2
//! ```
//!
//! and the image score is the mean over all stride-1 windows (and channels).

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One window covering the whole image.
    Global,
    /// Mean over all stride-1 windows of side `window`.
    WindowedMean,
}

/// Numerator combination. `PrintedSum` adds the two numerator factors instead
/// of multiplying them; it does not score 1 for identical images and exists
/// only for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsimForm {
    Product,
    PrintedSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub data_range: f64,
    pub window: usize,
    pub aggregation: Aggregation,
    pub form: SsimForm,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            window: 7,
            aggregation: Aggregation::WindowedMean,
            form: SsimForm::Product,
        }
    }
}

impl SsimParams {
    pub fn global() -> Self {
        SsimParams {
            aggregation: Aggregation::Global,
            ..Default::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1 < 1.0 && self.k2 > 0.0 && self.k2 < 1.0) {
            return Err(Error::Config(format!(
                "K1={} and K2={} must lie in (0, 1)",
                self.k1, self.k2
            )));
        }
        if !(self.data_range > 0.0 && self.data_range.is_finite()) {
            return Err(Error::Config(format!(
                "data range {} must be positive",
                self.data_range
            )));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("window {} must be odd", self.window)));
        }
        Ok(())
    }

    /// Window side actually used for an `h x w` image.
    fn window_for(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.aggregation {
            Aggregation::Global => Ok((h, w)),
            Aggregation::WindowedMean => {
                if self.window > h.min(w) {
                    return Err(Error::Shape(format!(
                        "window {} larger than image {h}x{w}",
                        self.window
                    )));
                }
                Ok((self.window, self.window))
            }
        }
    }
}

/// Per-window local SSIM values, `rows x cols`, averaged across channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Map as an image, values clipped into `[0, 1]` for display.
    pub fn to_image(&self) -> Image {
        Image::from_clipped(self.rows, self.cols, 1, self.values.clone()).expect("positive dims")
    }
}

#[derive(Clone, Copy, Debug)]
struct WindowStats {
    mx: f64,
    my: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn window_stats(
    x: &[f64],
    y: &[f64],
    width: usize,
    top: usize,
    left: usize,
    wh: usize,
    ww: usize,
) -> WindowStats {
    let n = (wh * ww) as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in top..top + wh {
        for c in left..left + ww {
            sx += x[r * width + c];
            sy += y[r * width + c];
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for r in top..top + wh {
        for c in left..left + ww {
            let dx = x[r * width + c] - mx;
            let dy = y[r * width + c] - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    WindowStats {
        mx,
        my,
        sxx: sxx / n,
        syy: syy / n,
        sxy: sxy / n,
    }
}

fn check_pair(x: &Image, y: &Image, p: &SsimParams) -> Result<()> {
    p.validate()?;
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "ssim inputs differ: {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

pub fn ssim_map(x: &Image, y: &Image, p: &SsimParams) -> Result<SsimMap> {
    check_pair(x, y, p)?;
    let (h, w, ch) = x.dims();
    let (wh, ww) = p.window_for(h, w)?;
    let (rows, cols) = (h - wh + 1, w - ww + 1);
    let (c1, c2) = (p.c1(), p.c2());
    let mut values = vec![0.0; rows * cols];
    for k in 0..ch {
        let (xp, yp) = (x.plane(k), y.plane(k));
        for r in 0..rows {
            for c in 0..cols {
                let s = window_stats(&xp, &yp, w, r, c, wh, ww);
                let a1 = 2.0 * s.mx * s.my + c1;
                let a2 = 2.0 * s.sxy + c2;
                let b1 = s.mx * s.mx + s.my * s.my + c1;
                let b2 = s.sxx + s.syy + c2;
                let local = match p.form {
                    SsimForm::Product => (a1 * a2) / (b1 * b2),
                    SsimForm::PrintedSum => (a1 + a2) / (b1 * b2),
                };
                values[r * cols + c] += local;
            }
        }
    }
    if ch > 1 {
        for v in &mut values {
            *v /= ch as f64;
        }
    }
    Ok(SsimMap { rows, cols, values })
}

pub fn ssim(x: &Image, y: &Image, p: &SsimParams) -> Result<f64> {
    Ok(ssim_map(x, y, p)?.mean())
}

/// SSIM together with its gradients with respect to every value of `x` and
/// of `y` (product form only).
pub fn ssim_with_grad(x: &Image, y: &Image, p: &SsimParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(x, y, p)?;
    if p.form != SsimForm::Product {
        return Err(Error::Config(
            "gradients are only defined for the product form".into(),
        ));
    }
    let (h, w, ch) = x.dims();
    let (wh, ww) = p.window_for(h, w)?;
    let (rows, cols) = (h - wh + 1, w - ww + 1);
    let (c1, c2) = (p.c1(), p.c2());
    let n = (wh * ww) as f64;
    // d(mean)/d(local) for every window and channel
    let scale = 1.0 / (rows * cols * ch) as f64;
    let mut gx = vec![0.0; h * w * ch];
    let mut gy = vec![0.0; h * w * ch];
    let mut map = vec![0.0; rows * cols];
    for k in 0..ch {
        let (xp, yp) = (x.plane(k), y.plane(k));
        for r in 0..rows {
            for c in 0..cols {
                let s = window_stats(&xp, &yp, w, r, c, wh, ww);
                let a1 = 2.0 * s.mx * s.my + c1;
                let a2 = 2.0 * s.sxy + c2;
                let b1 = s.mx * s.mx + s.my * s.my + c1;
                let b2 = s.sxx + s.syy + c2;
                let den = b1 * b2;
                let local = (a1 * a2) / den;
                map[r * cols + c] += local;
                let d_a1 = a2 / den * scale;
                let d_a2 = a1 / den * scale;
                let d_b1 = -local / b1 * scale;
                let d_b2 = -local / b2 * scale;
                // contributions through the window means
                let mean_x = (d_a1 * 2.0 * s.my + d_b1 * 2.0 * s.mx) / n;
                let mean_y = (d_a1 * 2.0 * s.mx + d_b1 * 2.0 * s.my) / n;
                for rr in r..r + wh {
                    for cc in c..c + ww {
                        let i = rr * w + cc;
                        let dx = xp[i] - s.mx;
                        let dy = yp[i] - s.my;
                        gx[i * ch + k] += mean_x + (d_b2 * 2.0 * dx + d_a2 * 2.0 * dy) / n;
                        gy[i * ch + k] += mean_y + (d_b2 * 2.0 * dy + d_a2 * 2.0 * dx) / n;
                    }
                }
            }
        }
    }
    if ch > 1 {
        for v in &mut map {
            *v /= ch as f64;
        }
    }
    let total = map.iter().sum::<f64>() / map.len() as f64;
    Ok((total, gx, gy))
}

pub fn rmse(x: &Image, y: &Image) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "rmse inputs differ: {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    let n = x.data().len() as f64;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / n).sqrt())
}
