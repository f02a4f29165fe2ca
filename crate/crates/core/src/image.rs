//! Grayscale raster used throughout the pipeline.
//!
//! Pixel centers sit at integer coordinates: pixel `(x, y)` covers
//! `[x - 0.5, x + 0.5) x [y - 0.5, y + 0.5)`. Values are gray levels on the
//! nominal 0..=255 scale but are kept as unclamped `f64` until written out.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Wraps a row-major pixel buffer.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::dims(width * height, pixels.len()));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i} is not finite ({})",
                pixels[i]
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel center.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation between the four surrounding pixel centers.
    ///
    /// Coordinates are clamped to `[0, w-1] x [0, h-1]` first, so sampling
    /// outside the raster replicates the border.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// SHA-256 of the dimensions and pixel values, used to identify corpus
    /// images independently of how they were encoded on disk.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.width as u64).to_le_bytes());
        hasher.update((self.height as u64).to_le_bytes());
        for v in &self.pixels {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Root mean squared difference over the region left after removing
/// `border` pixels from every side.
pub fn rms_error(a: &GrayImage, b: &GrayImage, border: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    if 2 * border >= a.width || 2 * border >= a.height {
        return Err(Error::InvalidArgument(format!(
            "border {border} leaves no interior in a {}x{} image",
            a.width, a.height
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in border..a.height - border {
        for (pa, pb) in a.row(y)[border..a.width - border]
            .iter()
            .zip(&b.row(y)[border..b.width - border])
        {
            let d = pa - pb;
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn bilinear_reproduces_grid_values() {
        let img = GrayImage::from_fn(5, 6, |x, y| (x * 7 + y * 13) as f64 % 11.0);
        assert_eq!(img.bilinear_sample(2.0, 3.0), img.get(2, 3));
        assert_eq!(img.bilinear_sample(4.0, 5.0), img.get(4, 5));
    }

    #[test]
    fn bilinear_midpoint_and_clamp() {
        let img = GrayImage::new(2, 1, vec![10.0, 20.0]).unwrap();
        assert_eq!(img.bilinear_sample(0.5, 0.0), 15.0);
        let img = GrayImage::from_fn(4, 4, |x, y| (x + 10 * y) as f64);
        assert_eq!(img.bilinear_sample(-5.0, 2.0), img.get(0, 2));
        assert_eq!(img.bilinear_sample(-5.0, 1.5), img.bilinear_sample(0.0, 1.5));
        assert_eq!(img.bilinear_sample(9.0, 9.0), img.get(3, 3));
    }

    #[test]
    fn rms_examples() {
        let a = GrayImage::filled(4, 4, 100.0);
        let b = GrayImage::filled(4, 4, 105.0);
        assert_eq!(rms_error(&a, &a, 0).unwrap(), 0.0);
        assert_eq!(rms_error(&a, &b, 0).unwrap(), 5.0);
        let a = GrayImage::new(2, 1, vec![0.0, 10.0]).unwrap();
        let b = GrayImage::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert!((rms_error(&a, &b, 0).unwrap() - 50f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rms_errors() {
        let a = GrayImage::filled(4, 4, 0.0);
        let b = GrayImage::filled(4, 5, 0.0);
        assert!(matches!(rms_error(&a, &b, 0), Err(Error::DimensionMismatch { .. })));
        assert!(rms_error(&a, &a, 2).is_err());
        assert!(rms_error(&a, &a, 1).is_ok());
    }

    #[test]
    fn rms_border_excludes_edges() {
        let a = GrayImage::filled(6, 6, 0.0);
        let mut b = a.clone();
        b.set(0, 0, 100.0);
        b.set(5, 3, 100.0);
        assert_eq!(rms_error(&a, &b, 1).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn bilinear_is_continuous(x in -1.0f64..5.0, y in -1.0f64..5.0) {
            let img = GrayImage::from_fn(5, 5, |x, y| ((x * 31 + y * 17) % 23) as f64);
            let h = 1e-7;
            let d = (img.bilinear_sample(x + h, y + h) - img.bilinear_sample(x, y)).abs();
            // Lipschitz constant is bounded by twice the largest neighbor difference.
            prop_assert!(d <= 2.0 * 22.0 * h * 2.0);
        }

        #[test]
        fn rms_is_symmetric(seed in any::<u64>()) {
            let a = GrayImage::from_fn(7, 5, |x, y| ((x as u64 * 13 + y as u64 * 7 + seed) % 97) as f64);
            let b = GrayImage::from_fn(7, 5, |x, y| ((x as u64 * 5 + y as u64 * 11 + seed / 3) % 89) as f64);
            let ab = rms_error(&a, &b, 1).unwrap();
            let ba = rms_error(&b, &a, 1).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
        }
    }
}
