//! Flip / shift / rotate augmentation for exporting training patches.
//!
//! Transforms are applied in a fixed order: flips, then an integer shift,
//! then rotation about the patch centre. Pixels pulled from outside the
//! patch are mirrored back in with edge-repeating reflection (`dcba|abcd|dcba`).
//! Quarter-turn rotations are exact index permutations; other angles use
//! bilinear resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RgbRaster;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("augmentation needs a square patch, got {width}x{height}")]
    NotSquare { width: u32, height: u32 },
    #[error("shift ({dx}, {dy}) exceeds the limit of {limit}px for a {size}px patch")]
    ShiftTooLarge {
        dx: i32,
        dy: i32,
        limit: i32,
        size: u32,
    },
    #[error("rotation {0} deg is outside [-180, 180]")]
    Rotation(f64),
}

/// One concrete augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AugmentSpec {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Content moves right by `dx` and down by `dy` pixels.
    pub shift: (i32, i32),
    /// Counter-clockwise as displayed, in degrees.
    pub rotation_deg: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn flips(horizontal: bool, vertical: bool) -> Self {
        Self {
            flip_horizontal: horizontal,
            flip_vertical: vertical,
            ..Self::default()
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::default()
        }
    }

    fn validate(&self, size: u32) -> Result<(), AugmentError> {
        let limit = max_shift(size);
        let (dx, dy) = self.shift;
        if dx.abs() > limit || dy.abs() > limit {
            return Err(AugmentError::ShiftTooLarge {
                dx,
                dy,
                limit,
                size,
            });
        }
        if !(-180.0..=180.0).contains(&self.rotation_deg) {
            return Err(AugmentError::Rotation(self.rotation_deg));
        }
        Ok(())
    }
}

/// Largest allowed shift magnitude for a patch edge length.
pub fn max_shift(size: u32) -> i32 {
    (size / 4) as i32
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn square_size(patch: &RgbRaster) -> Result<u32, AugmentError> {
    if patch.width() != patch.height() {
        return Err(AugmentError::NotSquare {
            width: patch.width(),
            height: patch.height(),
        });
    }
    Ok(patch.width())
}

fn remap(patch: &RgbRaster, src: impl Fn(u32, u32) -> (usize, usize)) -> RgbRaster {
    let n = patch.width() as usize;
    let px = patch.pixels();
    RgbRaster::from_fn(patch.width(), patch.height(), |x, y| {
        let (sx, sy) = src(x, y);
        px[sy * n + sx]
    })
    .expect("same geometry")
    .with_pixel_pitch(patch.pixel_pitch_um())
}

fn flip(patch: &RgbRaster, horizontal: bool, vertical: bool) -> RgbRaster {
    let last = patch.width() - 1;
    remap(patch, |x, y| {
        let sx = if horizontal { last - x } else { x };
        let sy = if vertical { last - y } else { y };
        (sx as usize, sy as usize)
    })
}

fn shift(patch: &RgbRaster, dx: i32, dy: i32) -> RgbRaster {
    let n = i64::from(patch.width());
    remap(patch, |x, y| {
        (
            reflect(i64::from(x) - i64::from(dx), n),
            reflect(i64::from(y) - i64::from(dy), n),
        )
    })
}

/// Exact rotation by `quarter_turns` × 90° counter-clockwise.
fn rotate_quarter(patch: &RgbRaster, quarter_turns: i64) -> RgbRaster {
    let last = patch.width() - 1;
    match quarter_turns.rem_euclid(4) {
        0 => patch.clone(),
        1 => remap(patch, |x, y| ((last - y) as usize, x as usize)),
        2 => remap(patch, |x, y| ((last - x) as usize, (last - y) as usize)),
        _ => remap(patch, |x, y| (y as usize, (last - x) as usize)),
    }
}

/// Bilinear rotation about the patch centre with reflected borders.
pub(crate) fn rotate_bilinear(patch: &RgbRaster, deg: f64) -> RgbRaster {
    let n = i64::from(patch.width());
    let centre = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = deg.to_radians().sin_cos();
    let px = patch.pixels();
    let at = |x: i64, y: i64| px[reflect(y, n) * n as usize + reflect(x, n)];
    RgbRaster::from_fn(patch.width(), patch.height(), |x, y| {
        let dx = f64::from(x) - centre;
        let dy = f64::from(y) - centre;
        let sx = centre + dx * cos - dy * sin;
        let sy = centre + dx * sin + dy * cos;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let (p00, p10, p01, p11) = (
            at(x0, y0),
            at(x0 + 1, y0),
            at(x0, y0 + 1),
            at(x0 + 1, y0 + 1),
        );
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    })
    .expect("same geometry")
    .with_pixel_pitch(patch.pixel_pitch_um())
}

/// Applies `spec` to a square patch, keeping its dimensions.
pub fn augment_patch(patch: &RgbRaster, spec: &AugmentSpec) -> Result<RgbRaster, AugmentError> {
    let size = square_size(patch)?;
    spec.validate(size)?;

    let mut out = if spec.flip_horizontal || spec.flip_vertical {
        flip(patch, spec.flip_horizontal, spec.flip_vertical)
    } else {
        patch.clone()
    };
    if spec.shift != (0, 0) {
        out = shift(&out, spec.shift.0, spec.shift.1);
    }
    if spec.rotation_deg != 0.0 {
        out = if spec.rotation_deg % 90.0 == 0.0 {
            rotate_quarter(&out, (spec.rotation_deg / 90.0) as i64)
        } else {
            rotate_bilinear(&out, spec.rotation_deg)
        };
    }
    Ok(out)
}

/// Suffixes used in exported file names, index-aligned with
/// [`standard_specs`].
pub const VARIANT_NAMES: [&str; 8] = [
    "orig",
    "orig_rs",
    "fliph",
    "fliph_rs",
    "flipv",
    "flipv_rs",
    "fliphv",
    "fliphv_rs",
];

/// The eight standard variants of a `size`px patch: each of the four flip
/// combinations, once as-is and once with a seeded random rotation in
/// [-180, 180] and a random shift of up to `size / 4` pixels per axis.
pub fn standard_specs(size: u32, seed: u64) -> Vec<AugmentSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = max_shift(size);
    let mut specs = Vec::with_capacity(VARIANT_NAMES.len());
    for (h, v) in [(false, false), (true, false), (false, true), (true, true)] {
        let base = AugmentSpec::flips(h, v);
        specs.push(base);
        specs.push(AugmentSpec {
            rotation_deg: rng.random_range(-180.0..=180.0),
            shift: (
                rng.random_range(-limit..=limit),
                rng.random_range(-limit..=limit),
            ),
            ..base
        });
    }
    specs
}

pub fn standard_augmentations(
    patch: &RgbRaster,
    seed: u64,
) -> Result<Vec<RgbRaster>, AugmentError> {
    let size = square_size(patch)?;
    standard_specs(size, seed)
        .iter()
        .map(|spec| augment_patch(patch, spec))
        .collect()
}
