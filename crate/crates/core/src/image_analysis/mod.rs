//! Framing analysis on 2-D grayscale images: normalization and cropping,
//! right-edge profiles, cluster means, and vertical shift estimation.
//!
//! Rows run top to bottom, so a positive shift moves anatomy towards larger
//! row indices.

mod io;
mod profile;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

pub use io::{
    load_and_normalize, parse_rawf32, read_image, read_pgm, read_rawf32, write_pgm, write_profiles_csv, write_rawf32,
    RawImage, RawSidecar,
};
pub use profile::{aggregate_profiles, edge_profile, estimate_shift, EdgeProfile, MeanProfile, ShiftEstimate};

/// Side length of the fixed center crop.
pub const CROP_SIZE: usize = 256;
/// Default tissue threshold on the `[0, 1]` intensity scale.
pub const EDGE_THRESHOLD: f64 = 0.1;

/// Row-major grayscale image; normalized images hold values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
                context: Some(format!("{width}x{height} image buffer")),
            });
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> T {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: T) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Crop of `size × size` at offsets `floor((dim − size) / 2)`.
    pub fn center_crop(&self, size: usize) -> Result<Image<T>> {
        if self.width < size || self.height < size {
            return Err(Error::invalid(format!(
                "image {}x{} is smaller than the {size}x{size} crop",
                self.width, self.height
            )));
        }
        let (dx, dy) = crop_offsets(self.width, self.height, size);
        let pixels = (dy..dy + size).flat_map(|r| self.row(r)[dx..dx + size].iter().copied()).collect();
        Ok(Image { width: size, height: size, pixels })
    }
}

pub fn crop_offsets(width: usize, height: usize, size: usize) -> (usize, usize) {
    ((width - size) / 2, (height - size) / 2)
}

/// Rescales by the image maximum into `[-1, 1]`, then center-crops.
pub fn normalize_and_crop<T: Scalar>(raw: &RawImage, size: usize) -> Result<Image<T>> {
    if raw.width < size || raw.height < size {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {size}x{size} crop",
            raw.width, raw.height
        )));
    }
    if let Some(v) = raw.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::format(format!("intensity {v} outside [0, max]")));
    }
    let max = raw.data.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroMaxValue);
    }
    let img = Image::new(raw.width, raw.height, raw.data.iter().map(|&v| T::of(2.0 * (v / max) - 1.0)).collect())?;
    img.center_crop(size)
}

/// Running pixelwise mean in `f64`, fed in a fixed order.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        MeanAccumulator { width, height, sum: vec![0.0; width * height], count: 0 }
    }

    pub fn add<T: Scalar>(&mut self, img: &Image<T>) -> Result<()> {
        if (img.width, img.height) != (self.width, self.height) {
            return Err(Error::invalid(format!(
                "image shape {}x{} differs from {}x{}",
                img.width, img.height, self.width, self.height
            )));
        }
        for (s, &v) in self.sum.iter_mut().zip(&img.pixels) {
            *s += v.as_f64();
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish<T: Scalar>(&self) -> Result<Image<T>> {
        if self.count == 0 {
            return Err(Error::invalid("mean of zero images"));
        }
        let n = self.count as f64;
        Image::new(self.width, self.height, self.sum.iter().map(|&s| T::of(s / n)).collect())
    }
}

pub fn mean_image<T: Scalar>(images: &[Image<T>]) -> Result<Image<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("mean of zero images"))?;
    let mut acc = MeanAccumulator::new(first.width, first.height);
    for img in images {
        acc.add(img)?;
    }
    acc.finish()
}

/// Mean of `count` images produced by `source(k)`. Images are produced in
/// parallel chunks and accumulated in index order, so only one chunk is held
/// in memory and the result does not depend on the worker count.
pub fn mean_image_from<T, F>(count: usize, source: F) -> Result<Image<T>>
where
    T: Scalar,
    F: Fn(usize) -> Result<Image<T>> + Sync,
{
    const CHUNK: usize = 64;
    let mut acc: Option<MeanAccumulator> = None;
    for start in (0..count).step_by(CHUNK) {
        let chunk: Vec<Image<T>> = (start..(start + CHUNK).min(count))
            .into_par_iter()
            .map(&source)
            .collect::<Result<_>>()?;
        for img in &chunk {
            acc.get_or_insert_with(|| MeanAccumulator::new(img.width, img.height)).add(img)?;
        }
    }
    acc.ok_or_else(|| Error::invalid("mean of zero images"))?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> RawImage {
        RawImage { width: w, height: h, data: (0..h).flat_map(|r| (0..w).map(move |c| (c, r))).map(|(c, r)| f(c, r)).collect() }
    }

    #[test]
    fn constant_max_image_normalizes_to_one() {
        let img: Image<f32> = normalize_and_crop(&raw(256, 256, |_, _| 4095.0), CROP_SIZE).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_image_rejected() {
        let r = normalize_and_crop::<f32>(&raw(256, 256, |_, _| 0.0), CROP_SIZE);
        assert!(matches!(r, Err(Error::ZeroMaxValue)));
        assert!(r.unwrap_err().to_string().contains("max-value 0"));
    }

    #[test]
    fn crop_offsets_use_floor() {
        assert_eq!(crop_offsets(300, 300, 256), (22, 22));
        assert_eq!(crop_offsets(301, 257, 256), (22, 0));
        let img: Image<f64> = normalize_and_crop(&raw(300, 300, |c, r| (c * 1000 + r) as f64), CROP_SIZE).unwrap();
        let max = (299 * 1000 + 299) as f64;
        assert_eq!(img.get(0, 0), 2.0 * (22_022.0 / max) - 1.0);
        assert!(normalize_and_crop::<f64>(&raw(255, 300, |_, _| 1.0), CROP_SIZE).is_err());
    }

    #[test]
    fn mean_of_opposites_is_zero() {
        let a = Image::new(2, 2, vec![0.5f32, -0.25, 1.0, 0.0]).unwrap();
        let b = a.map(|v: f32| -v);
        assert!(mean_image(&[a.clone(), b]).unwrap().pixels().iter().all(|&v| v == 0.0));
        assert_eq!(mean_image(&[a.clone()]).unwrap(), a);
        assert!(mean_image::<f32>(&[]).is_err());
        assert!(mean_image(&[a, Image::filled(3, 2, 0.0f32)]).is_err());
    }

    #[test]
    fn streaming_mean_matches_batch() {
        let imgs: Vec<Image<f64>> = (0..150).map(|k| Image::filled(3, 3, (k as f64).sin())).collect();
        let streamed = mean_image_from(150, |k| Ok(imgs[k].clone())).unwrap();
        assert_eq!(streamed, mean_image(&imgs).unwrap());
    }
}
