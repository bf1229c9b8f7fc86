//! Bluish-pixel masking and blue-density metrics.
//!
//! Hematoxylin stains nuclei blue/purple while eosin leaves stroma pink, so
//! a pixel whose blue channel clearly dominates its red channel is taken as
//! nucleus-stained. The fraction of such pixels in a patch (or in the whole
//! image) drives every patch-selection decision in [`crate::tiler`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BlueMask, RasterError, RegionRect, RgbRaster};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("ratio_threshold must be positive and finite, got {0}")]
    RatioThreshold(f64),
    #[error("patch_blue_min must lie in [0, 1], got {0}")]
    PatchBlueMin(f64),
    #[error("image_tier_bounds must be strictly decreasing values in (0, 1), got {0:?}")]
    TierBounds([f64; 3]),
    #[error("tier_counts must be strictly decreasing and at least 1, got {0:?}")]
    TierCounts([usize; 3]),
}

/// Thresholds for masking and for the density-tiered patch budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// A pixel is bluish when `blue > ratio_threshold * red`.
    pub ratio_threshold: f64,
    /// A patch qualifies when its bluish fraction is strictly above this.
    pub patch_blue_min: f64,
    /// Whole-image bluish fraction bounds separating the four tiers.
    pub image_tier_bounds: [f64; 3],
    /// Patch budgets for the three capped tiers, densest tier first.
    pub tier_counts: [usize; 3],
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            ratio_threshold: 1.587,
            patch_blue_min: 0.02,
            image_tier_bounds: [0.01, 0.005, 0.001],
            tier_counts: [10, 5, 1],
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.ratio_threshold.is_finite() && self.ratio_threshold > 0.0) {
            return Err(ConfigError::RatioThreshold(self.ratio_threshold));
        }
        if !(0.0..=1.0).contains(&self.patch_blue_min) {
            return Err(ConfigError::PatchBlueMin(self.patch_blue_min));
        }
        let b = self.image_tier_bounds;
        let in_unit = b.iter().all(|&v| v > 0.0 && v < 1.0);
        if !in_unit || !(b[0] > b[1] && b[1] > b[2]) {
            return Err(ConfigError::TierBounds(b));
        }
        let c = self.tier_counts;
        if c[2] < 1 || !(c[0] > c[1] && c[1] > c[2]) {
            return Err(ConfigError::TierCounts(c));
        }
        Ok(())
    }
}

/// Single-pixel bluish test in multiplication form, so `red == 0` needs no
/// special case: it is bluish exactly when `blue > 0`.
#[inline]
pub fn is_bluish(rgb: [u8; 3], ratio_threshold: f64) -> bool {
    f64::from(rgb[2]) > ratio_threshold * f64::from(rgb[0])
}

pub fn compute_blue_mask(raster: &RgbRaster, config: &MaskConfig) -> BlueMask {
    let t = config.ratio_threshold;
    let bits = raster.pixels().iter().map(|&p| is_bluish(p, t)).collect();
    BlueMask::new(raster.width(), raster.height(), bits).expect("mask shares the raster geometry")
}

/// `count / area` as a float. Both the direct and the integral-image paths
/// go through here so their results agree bit for bit.
#[inline]
pub(crate) fn density(count: u64, area: u64) -> f64 {
    count as f64 / area as f64
}

/// Fraction of set bits inside `region`.
pub fn blue_fraction(mask: &BlueMask, region: RegionRect) -> Result<f64, RasterError> {
    region.check_bounds(mask.width(), mask.height())?;
    if region.area() == 0 {
        return Err(RasterError::ZeroDimension {
            width: region.w,
            height: region.h,
        });
    }
    let w = mask.width() as usize;
    let bits = mask.bits();
    let mut count = 0u64;
    for row in region.y as usize..(region.y + region.h) as usize {
        let start = row * w + region.x as usize;
        count += bits[start..start + region.w as usize]
            .iter()
            .filter(|&&b| b)
            .count() as u64;
    }
    Ok(density(count, region.area()))
}

/// Whole-image bluish fraction.
pub fn image_blue_metric(mask: &BlueMask) -> f64 {
    density(mask.count_ones(), mask.full_region().area())
}

/// Summed-area table over a mask for O(1) rectangle counts.
#[derive(Debug, Clone)]
pub struct MaskIntegral {
    width: u32,
    height: u32,
    // (width + 1) * (height + 1), first row and column zero
    sums: Vec<u64>,
}

impl MaskIntegral {
    pub fn new(mask: &BlueMask) -> Self {
        let (w, h) = (mask.width() as usize, mask.height() as usize);
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        let bits = mask.bits();
        for y in 0..h {
            let mut row_sum = 0u64;
            for x in 0..w {
                row_sum += u64::from(bits[y * w + x]);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row_sum;
            }
        }
        Self {
            width: mask.width(),
            height: mask.height(),
            sums,
        }
    }

    pub fn count(&self, region: RegionRect) -> Result<u64, RasterError> {
        region.check_bounds(self.width, self.height)?;
        let stride = self.width as usize + 1;
        let (x0, y0) = (region.x as usize, region.y as usize);
        let (x1, y1) = (x0 + region.w as usize, y0 + region.h as usize);
        let at = |x: usize, y: usize| self.sums[y * stride + x];
        Ok(at(x1, y1) + at(x0, y0) - at(x1, y0) - at(x0, y1))
    }

    pub fn fraction(&self, region: RegionRect) -> Result<f64, RasterError> {
        let count = self.count(region)?;
        if region.area() == 0 {
            return Err(RasterError::ZeroDimension {
                width: region.w,
                height: region.h,
            });
        }
        Ok(density(count, region.area()))
    }
}
