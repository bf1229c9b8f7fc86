//! Overlapping patch grid and density-tiered patch selection.
//!
//! Candidates come from a plain row-major grid (no extra clamped patches
//! along the right/bottom border). A candidate qualifies when its bluish
//! fraction exceeds `patch_blue_min`; the whole-image bluish fraction then
//! decides how many of the qualified candidates, densest first, are kept.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bluemask::{image_blue_metric, MaskConfig, MaskIntegral};
use crate::raster::{BlueMask, RasterError, RegionRect, RgbRaster};

pub const DEFAULT_PATCH_SIZE: u32 = 299;
/// floor(299 / 2): the largest stride that keeps at least 50% overlap.
pub const DEFAULT_STRIDE: u32 = 149;

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("image {width}x{height} is smaller than the {patch_size}px patch")]
    TooSmall {
        width: u32,
        height: u32,
        patch_size: u32,
    },
    #[error("invalid grid geometry: {0}")]
    Geometry(String),
    #[error("mask is {mask_w}x{mask_h} but raster is {raster_w}x{raster_h}")]
    MaskMismatch {
        mask_w: u32,
        mask_h: u32,
        raster_w: u32,
        raster_h: u32,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Patch edge length and grid step, both in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_size: u32,
    pub stride: u32,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl PatchGeometry {
    pub fn validate(&self) -> Result<(), TilerError> {
        if self.patch_size == 0 {
            return Err(TilerError::Geometry("patch_size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(TilerError::Geometry("stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-major grid of fully contained `patch_size` squares spaced `stride`
/// apart.
pub fn grid_candidates(
    width: u32,
    height: u32,
    patch_size: u32,
    stride: u32,
) -> Result<Vec<RegionRect>, TilerError> {
    PatchGeometry { patch_size, stride }.validate()?;
    if patch_size > width || patch_size > height {
        return Err(TilerError::TooSmall {
            width,
            height,
            patch_size,
        });
    }
    let cols = (width - patch_size) / stride + 1;
    let rows = (height - patch_size) / stride + 1;
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        for c in 0..cols {
            out.push(RegionRect::new(
                c * stride,
                r * stride,
                patch_size,
                patch_size,
            ));
        }
    }
    Ok(out)
}

/// Number of candidate columns and rows for an image.
pub fn grid_shape(
    width: u32,
    height: u32,
    geometry: PatchGeometry,
) -> Result<(u32, u32), TilerError> {
    geometry.validate()?;
    let PatchGeometry { patch_size, stride } = geometry;
    if patch_size > width || patch_size > height {
        return Err(TilerError::TooSmall {
            width,
            height,
            patch_size,
        });
    }
    Ok((
        (width - patch_size) / stride + 1,
        (height - patch_size) / stride + 1,
    ))
}

/// A candidate patch with its bluish fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: RegionRect,
    pub blue_density: f64,
    /// (row, col) in the candidate grid.
    pub grid_index: (u32, u32),
}

/// How many qualified patches an image contributes, from its whole-image
/// bluish fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    KeepAll,
    Top(usize),
}

impl Tier {
    pub fn cap(&self) -> Option<usize> {
        match self {
            Tier::KeepAll => None,
            Tier::Top(n) => Some(*n),
        }
    }

    /// Tier for a whole-image bluish fraction. Each band is open below and
    /// closed above, so a metric sitting exactly on a bound drops into the
    /// lower band.
    pub fn for_metric(metric: f64, config: &MaskConfig) -> Tier {
        let [hi, mid, lo] = config.image_tier_bounds;
        let [c_hi, c_mid, c_lo] = config.tier_counts;
        if metric > hi {
            Tier::KeepAll
        } else if metric > mid {
            Tier::Top(c_hi)
        } else if metric > lo {
            Tier::Top(c_mid)
        } else {
            Tier::Top(c_lo)
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::KeepAll => f.write_str("keep_all"),
            Tier::Top(n) => write!(f, "top{n}"),
        }
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "keep_all" {
            return Ok(Tier::KeepAll);
        }
        s.strip_prefix("top")
            .and_then(|n| n.parse().ok())
            .map(Tier::Top)
            .ok_or_else(|| format!("unknown tier {s:?}"))
    }
}

impl Serialize for Tier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of patch selection for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub image_blue_metric: f64,
    pub tier: Tier,
    pub candidates_total: usize,
    pub candidates_qualified: usize,
    /// Set when no candidate qualified and the densest one was taken anyway.
    pub fallback: bool,
    /// Densest first; equal densities keep grid scan order.
    pub selected: Vec<PatchSpec>,
    /// Every candidate in scan order. Not persisted.
    #[serde(skip)]
    pub candidates: Vec<PatchSpec>,
}

impl SelectionReport {
    /// Candidates that were not selected, in scan order.
    pub fn rejected(&self) -> impl Iterator<Item = &PatchSpec> {
        self.candidates
            .iter()
            .filter(move |c| !self.selected.iter().any(|s| s.grid_index == c.grid_index))
    }
}

/// Densest first, then row-major grid order.
fn by_density_then_scan(a: &PatchSpec, b: &PatchSpec) -> Ordering {
    b.blue_density
        .total_cmp(&a.blue_density)
        .then(a.grid_index.cmp(&b.grid_index))
}

/// Scores every grid candidate and applies the tiered selection policy.
pub fn select_patches(
    raster: &RgbRaster,
    mask: &BlueMask,
    config: &MaskConfig,
    geometry: PatchGeometry,
) -> Result<SelectionReport, TilerError> {
    if (mask.width(), mask.height()) != (raster.width(), raster.height()) {
        return Err(TilerError::MaskMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            raster_w: raster.width(),
            raster_h: raster.height(),
        });
    }
    let regions = grid_candidates(
        mask.width(),
        mask.height(),
        geometry.patch_size,
        geometry.stride,
    )?;
    let (cols, _) = grid_shape(mask.width(), mask.height(), geometry)?;
    let integral = MaskIntegral::new(mask);

    let candidates = regions
        .iter()
        .enumerate()
        .map(|(i, &origin)| {
            let i = i as u32;
            Ok(PatchSpec {
                origin,
                blue_density: integral.fraction(origin)?,
                grid_index: (i / cols, i % cols),
            })
        })
        .collect::<Result<Vec<_>, RasterError>>()?;

    let metric = image_blue_metric(mask);
    let tier = Tier::for_metric(metric, config);

    let mut qualified: Vec<PatchSpec> = candidates
        .iter()
        .filter(|c| c.blue_density > config.patch_blue_min)
        .copied()
        .collect();
    let candidates_qualified = qualified.len();
    qualified.sort_by(by_density_then_scan);

    let fallback = qualified.is_empty();
    let selected = if fallback {
        let densest = candidates
            .iter()
            .min_by(|a, b| by_density_then_scan(a, b))
            .copied()
            .expect("grid has at least one candidate");
        vec![densest]
    } else {
        if let Some(cap) = tier.cap() {
            qualified.truncate(cap);
        }
        qualified
    };

    Ok(SelectionReport {
        image_blue_metric: metric,
        tier,
        candidates_total: candidates.len(),
        candidates_qualified,
        fallback,
        selected,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bluemask::blue_fraction;

    /// Every origin on the pixel lattice, filtered to stride multiples.
    fn enumerate_origins(w: u32, h: u32, p: u32, s: u32) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if x % s == 0 && y % s == 0 && x + p <= w && y + p <= h {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn full_size_grid_has_108_candidates() {
        let g = grid_candidates(2048, 1536, 299, 149).unwrap();
        assert_eq!(g.len(), 108);
        let oracle = enumerate_origins(2048, 1536, 299, 149);
        let got: Vec<_> = g.iter().map(|r| (r.x, r.y)).collect();
        assert_eq!(got, oracle);
        assert_eq!(
            grid_shape(2048, 1536, PatchGeometry::default()).unwrap(),
            (12, 9)
        );
    }

    #[test]
    fn border_strips_are_left_uncovered() {
        let g = grid_candidates(2048, 1536, 299, 149).unwrap();
        let right = g.iter().map(|r| r.x + r.w).max().unwrap();
        let bottom = g.iter().map(|r| r.y + r.h).max().unwrap();
        assert_eq!(2048 - right, 110);
        assert_eq!(1536 - bottom, 45);
    }

    #[test]
    fn patch_sized_image_gives_one_candidate() {
        assert_eq!(
            grid_candidates(299, 299, 299, 149).unwrap(),
            vec![RegionRect::new(0, 0, 299, 299)]
        );
        assert_eq!(grid_candidates(300, 299, 299, 149).unwrap().len(), 1);
    }

    #[test]
    fn too_small_image() {
        assert!(matches!(
            grid_candidates(298, 1000, 299, 149),
            Err(TilerError::TooSmall { width: 298, .. })
        ));
        assert!(matches!(
            grid_candidates(500, 500, 299, 0),
            Err(TilerError::Geometry(_))
        ));
    }

    #[test]
    fn default_stride_overlaps_at_least_half() {
        let g = PatchGeometry::default();
        assert!(g.stride <= g.patch_size.div_ceil(2));
        assert!(2 * (g.patch_size - g.stride) >= g.patch_size);
    }

    #[test]
    fn tier_boundaries_fall_into_lower_band() {
        let cfg = MaskConfig::default();
        assert_eq!(Tier::for_metric(0.015, &cfg), Tier::KeepAll);
        assert_eq!(Tier::for_metric(0.01, &cfg), Tier::Top(10));
        assert_eq!(Tier::for_metric(0.007, &cfg), Tier::Top(10));
        assert_eq!(Tier::for_metric(0.005, &cfg), Tier::Top(5));
        assert_eq!(Tier::for_metric(0.002, &cfg), Tier::Top(5));
        assert_eq!(Tier::for_metric(0.001, &cfg), Tier::Top(1));
        assert_eq!(Tier::for_metric(0.0, &cfg), Tier::Top(1));
    }

    #[test]
    fn tier_text_form() {
        for t in [Tier::KeepAll, Tier::Top(10), Tier::Top(1)] {
            assert_eq!(t.to_string().parse::<Tier>().unwrap(), t);
        }
        assert_eq!(serde_json::to_string(&Tier::Top(5)).unwrap(), "\"top5\"");
        assert!("top".parse::<Tier>().is_err());
    }

    /// 20×20 grid of 10px cells; `fill(row, col)` gives how many pixels of
    /// the top row of each cell to set.
    fn cell_mask(fill: impl Fn(u32, u32) -> u32) -> (RgbRaster, BlueMask) {
        let (w, h) = (200, 200);
        let mut bits = vec![false; (w * h) as usize];
        for cy in 0..20 {
            for cx in 0..20 {
                let n = fill(cy, cx).min(100);
                for k in 0..n {
                    let (x, y) = (cx * 10 + k % 10, cy * 10 + k / 10);
                    bits[(y * w + x) as usize] = true;
                }
            }
        }
        (
            RgbRaster::filled(w, h, [0; 3]).unwrap(),
            BlueMask::new(w, h, bits).unwrap(),
        )
    }

    const GEOM: PatchGeometry = PatchGeometry {
        patch_size: 10,
        stride: 10,
    };

    fn cfg() -> MaskConfig {
        MaskConfig {
            patch_blue_min: 0.02,
            ..MaskConfig::default()
        }
    }

    #[test]
    fn keep_all_tier_selects_every_qualified_patch() {
        // 30 cells with 50% fill -> metric 1500/40000 = 3.75%
        let (r, m) = cell_mask(|y, x| if y * 20 + x < 30 { 50 } else { 0 });
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert_eq!(rep.tier, Tier::KeepAll);
        assert_eq!(rep.candidates_qualified, 30);
        assert_eq!(rep.selected.len(), 30);
        assert!(!rep.fallback);
    }

    #[test]
    fn middle_tier_takes_top_ten_by_density() {
        // metric must land in (0.5%, 1%]: 25 cells with 10..=14 px
        let (r, m) = cell_mask(|y, x| {
            let i = y * 20 + x;
            if i < 25 {
                10 + i % 5
            } else {
                0
            }
        });
        let metric = image_blue_metric(&m);
        assert!(metric > 0.005 && metric <= 0.01, "{metric}");
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert_eq!(rep.tier, Tier::Top(10));
        assert_eq!(rep.candidates_qualified, 25);
        assert_eq!(rep.selected.len(), 10);
        // five cells at 14px then five at 13px, each run in scan order
        let dens: Vec<f64> = rep.selected.iter().map(|p| p.blue_density).collect();
        assert_eq!(&dens[..5], &[0.14; 5]);
        assert_eq!(&dens[5..], &[0.13; 5]);
        let idx: Vec<_> = rep.selected.iter().map(|p| p.grid_index).collect();
        assert_eq!(&idx[..5], &[(0, 4), (0, 9), (0, 14), (0, 19), (1, 4)]);
    }

    #[test]
    fn sparse_tier_takes_a_single_patch() {
        // 3 qualified cells, metric 0.05% -> top1
        let (r, m) = cell_mask(|y, x| match (y, x) {
            (0, 0) => 5,
            (3, 3) => 8,
            (7, 1) => 7,
            _ => 0,
        });
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert_eq!(rep.tier, Tier::Top(1));
        assert_eq!(rep.candidates_qualified, 3);
        assert_eq!(rep.selected.len(), 1);
        assert_eq!(rep.selected[0].grid_index, (3, 3));
    }

    #[test]
    fn fewer_qualified_than_cap_keeps_them_all() {
        let (r, m) = cell_mask(|y, x| {
            if (y, x) == (2, 2) || (y, x) == (5, 5) {
                100
            } else {
                0
            }
        });
        // metric 200/40000 = 0.5% -> top5, only 2 qualify
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert_eq!(rep.tier, Tier::Top(5));
        assert_eq!(rep.selected.len(), 2);
    }

    #[test]
    fn empty_mask_falls_back_to_first_candidate() {
        let (r, m) = cell_mask(|_, _| 0);
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert!(rep.fallback);
        assert_eq!(rep.candidates_qualified, 0);
        assert_eq!(rep.selected.len(), 1);
        assert_eq!(rep.selected[0].grid_index, (0, 0));
    }

    #[test]
    fn fallback_picks_densest_unqualified_candidate() {
        // every cell at or below 2% except none; densest is (4, 6) with 2px
        let (r, m) = cell_mask(|y, x| {
            if (y, x) == (4, 6) {
                2
            } else if (y + x) % 3 == 0 {
                1
            } else {
                0
            }
        });
        let rep = select_patches(&r, &m, &cfg(), GEOM).unwrap();
        assert!(rep.fallback);
        let best = rep
            .candidates
            .iter()
            .map(|c| c.blue_density)
            .fold(f64::MIN, f64::max);
        assert_eq!(rep.selected[0].blue_density, best);
        assert_eq!(rep.selected[0].grid_index, (4, 6));
    }

    #[test]
    fn stored_density_matches_recomputation() {
        let (r, m) = cell_mask(|y, x| (y * 7 + x * 3) % 40);
        let rep = select_patches(
            &r,
            &m,
            &cfg(),
            PatchGeometry {
                patch_size: 30,
                stride: 15,
            },
        )
        .unwrap();
        for p in rep.candidates.iter().chain(&rep.selected) {
            assert_eq!(blue_fraction(&m, p.origin).unwrap(), p.blue_density);
        }
        assert_eq!(
            rep.rejected().count() + rep.selected.len(),
            rep.candidates_total
        );
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let r = RgbRaster::filled(20, 20, [0; 3]).unwrap();
        let m = BlueMask::new(20, 19, vec![false; 380]).unwrap();
        assert!(matches!(
            select_patches(&r, &m, &cfg(), GEOM),
            Err(TilerError::MaskMismatch { .. })
        ));
    }
}
