use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::substream;
use crate::image_analysis::Image;
use crate::{Error, Result};

/// Sagittal-like images: a bright body whose right boundary follows
/// `base + curvature·u² + amplitude·sin(5u + 0.3)` with
/// `u = (row − shift − size/2) / size`, on a dark background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeckImageSpec {
    pub count: usize,
    pub size: usize,
    pub base_column: f64,
    pub curvature: f64,
    pub amplitude: f64,
    /// First tissue column of every row.
    pub left_column: usize,
    pub vertical_shift: i64,
    /// Tissue level on the `[0, 1]` scale.
    pub tissue_level: f64,
    /// Gaussian noise std in normalized `[-1, 1]` units.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for NeckImageSpec {
    fn default() -> Self {
        NeckImageSpec {
            count: 100,
            size: 256,
            base_column: 150.0,
            curvature: 60.0,
            amplitude: 12.0,
            left_column: 16,
            vertical_shift: 0,
            tissue_level: 0.7,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl NeckImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.vertical_shift.unsigned_abs() as usize >= self.size {
            return Err(Error::invalid(format!(
                "vertical shift {} must lie inside a {}-row image",
                self.vertical_shift, self.size
            )));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.tissue_level) {
            return Err(Error::invalid("noise must be non-negative and tissue level in [0, 1]"));
        }
        if let Some(r) = (0..self.size).find(|&r| {
            let c = self.curve(r);
            !(c >= self.left_column as f64 && c < self.size as f64)
        }) {
            return Err(Error::invalid(format!("edge curve leaves the image at row {r}")));
        }
        Ok(())
    }

    pub fn curve(&self, row: usize) -> f64 {
        let u = (row as f64 - self.vertical_shift as f64 - self.size as f64 / 2.0) / self.size as f64;
        self.base_column + self.curvature * u * u + self.amplitude * (5.0 * u + 0.3).sin()
    }

    /// Rightmost tissue column per row.
    pub fn ground_truth(&self) -> Vec<i32> {
        (0..self.size).map(|r| self.curve(r).floor() as i32).collect()
    }

    /// Image `k`, noise drawn from stream `k`.
    pub fn image(&self, k: usize) -> Result<Image<f32>> {
        self.validate()?;
        let tissue = 2.0 * self.tissue_level - 1.0;
        let edges = self.ground_truth();
        let mut img = Image::filled(self.size, self.size, -1.0f32);
        for (r, &edge) in edges.iter().enumerate() {
            for c in self.left_column..=edge as usize {
                img.set(c, r, tissue as f32);
            }
        }
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("positive std");
            let mut rng = substream(self.seed, k as u64);
            for v in img.pixels_mut() {
                *v = (*v as f64 + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32;
            }
        }
        Ok(img)
    }
}

/// All `count` images plus the ground-truth edge columns. For large counts
/// prefer [`NeckImageSpec::image`] with a streaming consumer.
pub fn generate_neck_images(spec: &NeckImageSpec) -> Result<(Vec<Image<f32>>, Vec<i32>)> {
    spec.validate()?;
    let images = (0..spec.count).into_par_iter().map(|k| spec.image(k)).collect::<Result<_>>()?;
    Ok((images, spec.ground_truth()))
}
