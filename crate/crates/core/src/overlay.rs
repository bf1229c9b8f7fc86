//! Diagnostic renderings: bluish-density heat map and patch boxes drawn over
//! a downscaled copy of the slide.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassLabel;
use crate::raster::{BlueMask, RegionRect, RgbRaster};
use crate::tiler::SelectionReport;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("patch {rect:?} lies outside the {width}x{height} raster")]
    Inconsistent {
        rect: RegionRect,
        width: u32,
        height: u32,
    },
    #[error("{labels} predicted labels for {selected} selected patches")]
    LabelCount { labels: usize, selected: usize },
    #[error("invalid overlay style: {0}")]
    Style(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayStyle {
    pub accepted_color: [u8; 3],
    pub rejected_color: [u8; 3],
    /// Box colour for each predicted class, in [`ClassLabel::ALL`] order.
    pub class_colors: [[u8; 3]; 4],
    pub line_thickness: u32,
    pub downscale: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            accepted_color: [0, 255, 0],
            rejected_color: [255, 0, 0],
            class_colors: [[0, 160, 255], [255, 255, 0], [255, 140, 0], [200, 0, 255]],
            line_thickness: 2,
            downscale: 4,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<(), OverlayError> {
        if self.downscale < 1 {
            return Err(OverlayError::Style("downscale must be at least 1".into()));
        }
        if self.line_thickness < 1 {
            return Err(OverlayError::Style(
                "line_thickness must be at least 1".into(),
            ));
        }
        let mut colors = vec![self.accepted_color, self.rejected_color];
        colors.extend(self.class_colors);
        for (i, a) in colors.iter().enumerate() {
            if colors[i + 1..].contains(a) {
                return Err(OverlayError::Style(format!("colour {a:?} is used twice")));
            }
        }
        Ok(())
    }
}

/// Block-averaged copy, `ceil(w / factor)` × `ceil(h / factor)`.
pub fn downscale(raster: &RgbRaster, factor: u32) -> RgbRaster {
    let factor = factor.max(1);
    if factor == 1 {
        return raster.clone();
    }
    let (w, h) = (raster.width(), raster.height());
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    RgbRaster::from_fn(ow, oh, |bx, by| {
        let (x0, y0) = (bx * factor, by * factor);
        let (x1, y1) = ((x0 + factor).min(w), (y0 + factor).min(h));
        let mut sum = [0u64; 3];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = raster.get(x, y);
                for c in 0..3 {
                    sum[c] += u64::from(p[c]);
                }
            }
        }
        let n = u64::from((x1 - x0) * (y1 - y0));
        sum.map(|s| ((s + n / 2) / n) as u8)
    })
    .expect("non-empty output")
}

/// Grey-level map of the bluish fraction inside each `factor`² block.
pub fn render_mask_heat(mask: &BlueMask, factor: u32) -> RgbRaster {
    let factor = factor.max(1);
    let (w, h) = (mask.width(), mask.height());
    RgbRaster::from_fn(w.div_ceil(factor), h.div_ceil(factor), |bx, by| {
        let (x0, y0) = (bx * factor, by * factor);
        let (x1, y1) = ((x0 + factor).min(w), (y0 + factor).min(h));
        let mut on = 0u32;
        for y in y0..y1 {
            for x in x0..x1 {
                on += u32::from(mask.get(x, y));
            }
        }
        let n = (x1 - x0) * (y1 - y0);
        let v = ((255 * on + n / 2) / n) as u8;
        [v, v, v]
    })
    .expect("non-empty output")
}

/// Inclusive pixel bounds of `rect` after downscaling.
fn scaled_bounds(rect: &RegionRect, factor: u32) -> (u32, u32, u32, u32) {
    (
        rect.x / factor,
        rect.y / factor,
        (rect.x + rect.w - 1) / factor,
        (rect.y + rect.h - 1) / factor,
    )
}

fn draw_box(
    img: &mut [[u8; 3]],
    width: u32,
    rect: &RegionRect,
    factor: u32,
    t: u32,
    color: [u8; 3],
) {
    let (x0, y0, x1, y1) = scaled_bounds(rect, factor);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let on_edge = x < x0 + t || y < y0 + t || x + t > x1 || y + t > y1;
            if on_edge {
                img[(y * width + x) as usize] = color;
            }
        }
    }
}

/// Downscaled slide with every grid candidate outlined: rejected ones in
/// `rejected_color`, selected ones in `accepted_color` or, when
/// `predictions` is given (aligned with `report.selected`), in the colour of
/// their predicted class. Selected boxes are drawn last.
pub fn render_overlay(
    raster: &RgbRaster,
    report: &SelectionReport,
    predictions: Option<&[ClassLabel]>,
    style: &OverlayStyle,
) -> Result<RgbRaster, OverlayError> {
    style.validate()?;
    for p in report.candidates.iter().chain(&report.selected) {
        if !p.origin.fits_within(raster.width(), raster.height()) || p.origin.area() == 0 {
            return Err(OverlayError::Inconsistent {
                rect: p.origin,
                width: raster.width(),
                height: raster.height(),
            });
        }
    }
    if let Some(labels) = predictions {
        if labels.len() != report.selected.len() {
            return Err(OverlayError::LabelCount {
                labels: labels.len(),
                selected: report.selected.len(),
            });
        }
    }

    let base = downscale(raster, style.downscale);
    let width = base.width();
    let height = base.height();
    let mut px = base.into_pixels();
    let t = style.line_thickness;
    for p in report.rejected() {
        draw_box(
            &mut px,
            width,
            &p.origin,
            style.downscale,
            t,
            style.rejected_color,
        );
    }
    for (i, p) in report.selected.iter().enumerate() {
        let color = match predictions {
            Some(labels) => style.class_colors[labels[i].index()],
            None => style.accepted_color,
        };
        draw_box(&mut px, width, &p.origin, style.downscale, t, color);
    }
    Ok(RgbRaster::new(width, height, px).expect("same geometry"))
}
