//! Mean structural similarity over an 11x11 Gaussian window (σ = 1.5),
//! K1 = 0.01, K2 = 0.03, dynamic range 255. Only windows that fit entirely
//! inside the image are scored.
//!
//! Local statistics are computed with separable filtering of `x`, `x²` and
//! `x·y`. A [`PreparedImage`] caches the per-image maps so that scanning a
//! set for duplicates filters each image once and only `x·y` per pair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;
pub const C1: f64 = (K1 * DYNAMIC_RANGE) * (K1 * DYNAMIC_RANGE);
pub const C2: f64 = (K2 * DYNAMIC_RANGE) * (K2 * DYNAMIC_RANGE);

/// Parameters recorded alongside filter reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub grayscale: String,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: WINDOW,
            sigma: SIGMA,
            k1: K1,
            k2: K2,
            dynamic_range: DYNAMIC_RANGE,
            grayscale: "bt601".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// BT.601 luma, rounded to the nearest level.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                actual: rgb.len(),
            });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let unreadable = |reason: String| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason,
        };
        let img = image::open(path).map_err(|e| unreadable(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::new(w, h, g.into_raw()),
            other => Self::from_rgb(w, h, other.to_rgb8().as_raw()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length matches dimensions")
            .save(path)
            .map_err(|e| Error::UnreadableImage {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }
}

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable "valid" Gaussian filter: output is `(h - 10) x (w - 10)`.
fn blur_valid(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Per-image filtered maps, computed once.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl PreparedImage {
    pub fn new(img: &GrayImage) -> Result<Self> {
        if img.width < WINDOW || img.height < WINDOW {
            return Err(Error::ImageTooSmall {
                width: img.width,
                height: img.height,
                window: WINDOW,
            });
        }
        let values: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
        let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
        Ok(Self {
            width: img.width,
            height: img.height,
            mean: blur_valid(&values, img.width, img.height),
            mean_sq: blur_valid(&sq, img.width, img.height),
            values,
        })
    }

    pub fn ssim(&self, other: &PreparedImage) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            });
        }
        let xy: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        let mean_xy = blur_valid(&xy, self.width, self.height);
        let mut total = 0.0;
        for (i, &mxy) in mean_xy.iter().enumerate() {
            let (mx, my) = (self.mean[i], other.mean[i]);
            let vx = self.mean_sq[i] - mx * mx;
            let vy = other.mean_sq[i] - my * my;
            let cxy = mxy - mx * my;
            total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
        Ok(total / mean_xy.len() as f64)
    }
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            left: (a.width, a.height),
            right: (b.width, b.height),
        });
    }
    PreparedImage::new(a)?.ssim(&PreparedImage::new(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((C1 - 6.5025).abs() < 1e-12);
        assert!((C2 - 58.5225).abs() < 1e-12);
        assert!((kernel().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_images_closed_form() {
        let s = ssim(&GrayImage::filled(16, 16, 0), &GrayImage::filled(16, 16, 255)).unwrap();
        assert!((s - C1 / (255.0 * 255.0 + C1)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn single_pixel_change_lowers_score() {
        let a = GrayImage::new(12, 12, (0..144).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
        let mut b = a.clone();
        b.pixels[70] = b.pixels[70].wrapping_add(40);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn shape_errors() {
        let a = GrayImage::filled(12, 12, 3);
        let b = GrayImage::filled(13, 12, 3);
        assert!(matches!(ssim(&a, &b), Err(Error::DimensionMismatch { .. })));
        let tiny = GrayImage::filled(5, 5, 0);
        assert!(matches!(ssim(&tiny, &tiny), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn bt601_luma() {
        let g = GrayImage::from_rgb(1, 1, &[255, 0, 0]).unwrap();
        assert_eq!(g.pixels, vec![76]);
    }
}
