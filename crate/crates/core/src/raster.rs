//! RGB rasters, boolean masks and rectangular regions.
//!
//! Everything downstream (masking, tiling, augmentation, classification)
//! works on [`RgbRaster`]. Rasters are immutable once built; constructors
//! check the pixel count against the declared dimensions.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physical size of one pixel in micrometres for 2048x1536 microscopy images.
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 0.42;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to decode {format} image: {message}")]
    Decode { format: String, message: String },
    #[error("failed to encode png: {0}")]
    Encode(String),
    #[error("image has zero dimension ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} pixels, expected {expected} for {width}x{height}")]
    PixelCount {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("region x={x} y={y} w={w} h={h} exceeds {width}x{height} bounds")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
}

/// Axis-aligned rectangle in pixel coordinates, origin at the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl RegionRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// True when the rectangle lies entirely inside a `width`×`height` grid.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    pub(crate) fn check_bounds(&self, width: u32, height: u32) -> Result<(), RasterError> {
        if self.fits_within(width, height) {
            Ok(())
        } else {
            Err(RasterError::OutOfBounds {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            })
        }
    }

    /// Interprets `inner` as relative to this rectangle and returns it in
    /// the parent coordinate frame.
    pub fn compose(&self, inner: &RegionRect) -> RegionRect {
        RegionRect::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }
}

/// 8-bit RGB image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
    pixel_pitch_um: f64,
}

impl RgbRaster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(RasterError::PixelCount {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
        })
    }

    /// Raster filled with a single colour.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, RasterError> {
        Self::new(width, height, vec![rgb; width as usize * height as usize])
    }

    /// Builds a raster by evaluating `f(x, y)` for each pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, RasterError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn with_pixel_pitch(mut self, pitch_um: f64) -> Self {
        self.pixel_pitch_um = pitch_um;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<[u8; 3]> {
        self.pixels
    }

    /// Pixel at column `x`, row `y`. Panics when out of range.
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x},{y}) out of range"
        );
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn full_region(&self) -> RegionRect {
        RegionRect::new(0, 0, self.width, self.height)
    }

    /// Flat RGB byte buffer, row-major.
    pub fn as_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.as_bytes())
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb_image(img: &image::RgbImage) -> Result<Self, RasterError> {
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(img.width(), img.height(), pixels)
    }
}

/// Row-major boolean mask with the same geometry as the raster it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlueMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BlueMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(RasterError::PixelCount {
                width,
                height,
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        assert!(
            x < self.width && y < self.height,
            "bit ({x},{y}) out of range"
        );
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn full_region(&self) -> RegionRect {
        RegionRect::new(0, 0, self.width, self.height)
    }

    /// 8-bit grayscale rendering: 255 for set bits, 0 otherwise.
    pub fn to_gray_image(&self) -> image::GrayImage {
        let buf = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, buf)
            .expect("buffer length matches dimensions")
    }
}

/// Formats accepted by [`decode_image_as`], as named in dataset manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Png,
    Jpeg,
    Tiff,
    Bmp,
}

impl RasterFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "jpg" | "jpeg" => Some(Self::Jpeg),
            "tif" | "tiff" => Some(Self::Tiff),
            "bmp" => Some(Self::Bmp),
            _ => None,
        }
    }

    fn image_format(self) -> ImageFormat {
        match self {
            Self::Png => ImageFormat::Png,
            Self::Jpeg => ImageFormat::Jpeg,
            Self::Tiff => ImageFormat::Tiff,
            Self::Bmp => ImageFormat::Bmp,
        }
    }
}

fn format_name(format: Option<ImageFormat>) -> String {
    match format {
        Some(f) => format!("{f:?}").to_ascii_lowercase(),
        None => "unknown".to_string(),
    }
}

/// Decodes an encoded image, sniffing the format from its magic bytes.
pub fn decode_image(bytes: &[u8]) -> Result<RgbRaster, RasterError> {
    decode_image_as(bytes, None)
}

/// Decodes an encoded image. When `format` is given the bytes are parsed
/// as that format only; otherwise the format is guessed from the content.
///
/// Alpha is dropped. 16-bit channels keep their high byte.
pub fn decode_image_as(
    bytes: &[u8],
    format: Option<RasterFormat>,
) -> Result<RgbRaster, RasterError> {
    let mut reader = ImageReader::new(Cursor::new(bytes));
    match format {
        Some(f) => reader.set_format(f.image_format()),
        None => {
            reader = reader
                .with_guessed_format()
                .map_err(|e| RasterError::Decode {
                    format: "unknown".into(),
                    message: e.to_string(),
                })?;
        }
    }
    let detected = reader.format();
    if detected.is_none() {
        return Err(RasterError::Decode {
            format: "unknown".into(),
            message: "unrecognised image signature".into(),
        });
    }
    let dynamic = reader.decode().map_err(|e| RasterError::Decode {
        format: format_name(detected),
        message: e.to_string(),
    })?;
    dynamic_to_raster(dynamic)
}

fn dynamic_to_raster(img: DynamicImage) -> Result<RgbRaster, RasterError> {
    let (width, height) = (img.width(), img.height());
    if width == 0 || height == 0 {
        return Err(RasterError::ZeroDimension { width, height });
    }
    let high = |v: u16| (v >> 8) as u8;
    let pixels: Vec<[u8; 3]> = match img {
        DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| [high(p[0]), high(p[1]), high(p[2])])
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| [high(p[0]), high(p[1]), high(p[2])])
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .pixels()
            .map(|p| {
                let v = high(p[0]);
                [v, v, v]
            })
            .collect(),
        DynamicImage::ImageLumaA16(buf) => buf
            .pixels()
            .map(|p| {
                let v = high(p[0]);
                [v, v, v]
            })
            .collect(),
        other => other.to_rgb8().pixels().map(|p| p.0).collect(),
    };
    RgbRaster::new(width, height, pixels)
}

/// Lossless PNG encoding of a raster.
pub fn encode_png(raster: &RgbRaster) -> Result<Vec<u8>, RasterError> {
    let mut out = Cursor::new(Vec::new());
    raster
        .to_rgb_image()
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// PNG encoding of a mask as 8-bit grayscale.
pub fn encode_mask_png(mask: &BlueMask) -> Result<Vec<u8>, RasterError> {
    let mut out = Cursor::new(Vec::new());
    mask.to_gray_image()
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Copies `region` out of `raster`. Pixel `(i, j)` of the result is source
/// pixel `(region.x + i, region.y + j)`.
pub fn crop(raster: &RgbRaster, region: RegionRect) -> Result<RgbRaster, RasterError> {
    region.check_bounds(raster.width, raster.height)?;
    if region.w == 0 || region.h == 0 {
        return Err(RasterError::ZeroDimension {
            width: region.w,
            height: region.h,
        });
    }
    let stride = raster.width as usize;
    let mut pixels = Vec::with_capacity(region.area() as usize);
    for row in region.y..region.y + region.h {
        let start = row as usize * stride + region.x as usize;
        pixels.extend_from_slice(&raster.pixels[start..start + region.w as usize]);
    }
    Ok(RgbRaster {
        width: region.w,
        height: region.h,
        pixels,
        pixel_pitch_um: raster.pixel_pitch_um,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RgbRaster {
        RgbRaster::from_fn(w, h, |x, y| {
            [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]
        })
        .unwrap()
    }

    #[test]
    fn single_white_pixel_round_trips() {
        let r = RgbRaster::new(1, 1, vec![[255, 255, 255]]).unwrap();
        let decoded = decode_image(&encode_png(&r).unwrap()).unwrap();
        assert_eq!(decoded.width(), 1);
        assert_eq!(decoded.height(), 1);
        assert_eq!(decoded.pixels(), &[[255, 255, 255]]);
    }

    #[test]
    fn full_size_image_keeps_dimensions() {
        let r = RgbRaster::filled(2048, 1536, [200, 120, 180]).unwrap();
        let decoded = decode_image(&encode_png(&r).unwrap()).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (2048, 1536));
    }

    #[test]
    fn truncated_png_is_a_decode_error() {
        let bytes = encode_png(&gradient(40, 30)).unwrap();
        let err = decode_image(&bytes[..bytes.len() / 2]).unwrap_err();
        match err {
            RasterError::Decode { format, .. } => assert_eq!(format, "png"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn garbage_bytes_are_rejected() {
        assert!(matches!(
            decode_image(b"definitely not an image"),
            Err(RasterError::Decode { .. })
        ));
    }

    #[test]
    fn forced_format_mismatch_names_the_format() {
        let bytes = encode_png(&gradient(4, 4)).unwrap();
        match decode_image_as(&bytes, Some(RasterFormat::Jpeg)) {
            Err(RasterError::Decode { format, .. }) => assert_eq!(format, "jpeg"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_is_dropped_not_blended() {
        let rgba = image::RgbaImage::from_raw(2, 1, vec![10, 20, 30, 0, 40, 50, 60, 128]).unwrap();
        let mut buf = Cursor::new(Vec::new());
        rgba.write_to(&mut buf, ImageFormat::Png).unwrap();
        let r = decode_image(buf.get_ref()).unwrap();
        assert_eq!(r.pixels(), &[[10, 20, 30], [40, 50, 60]]);
    }

    #[test]
    fn sixteen_bit_keeps_high_byte() {
        let data: Vec<u16> = vec![0x12ff, 0xab00, 0x0180];
        let img = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, data).unwrap();
        let mut buf = Cursor::new(Vec::new());
        DynamicImage::ImageRgb16(img)
            .write_to(&mut buf, ImageFormat::Png)
            .unwrap();
        let r = decode_image(buf.get_ref()).unwrap();
        assert_eq!(r.pixels(), &[[0x12, 0xab, 0x01]]);
    }

    #[test]
    fn jpeg_decodes_to_rgb() {
        let src = RgbRaster::filled(16, 8, [180, 90, 200]).unwrap();
        let mut buf = Cursor::new(Vec::new());
        src.to_rgb_image()
            .write_to(&mut buf, ImageFormat::Jpeg)
            .unwrap();
        let r = decode_image_as(buf.get_ref(), Some(RasterFormat::Jpeg)).unwrap();
        assert_eq!((r.width(), r.height()), (16, 8));
        let p = r.get(3, 3);
        assert!(p
            .iter()
            .zip([180u8, 90, 200])
            .all(|(&a, b)| a.abs_diff(b) <= 4));
    }

    #[test]
    fn constructor_rejects_bad_buffers() {
        assert!(matches!(
            RgbRaster::new(0, 5, vec![]),
            Err(RasterError::ZeroDimension { .. })
        ));
        assert!(matches!(
            RgbRaster::new(2, 2, vec![[0; 3]; 3]),
            Err(RasterError::PixelCount {
                expected: 4,
                actual: 3,
                ..
            })
        ));
    }

    #[test]
    fn identity_crop() {
        let r = gradient(37, 23);
        assert_eq!(crop(&r, r.full_region()).unwrap(), r);
    }

    #[test]
    fn patch_crop_at_origin() {
        let r = gradient(400, 320);
        let p = crop(&r, RegionRect::new(0, 0, 299, 299)).unwrap();
        assert_eq!((p.width(), p.height()), (299, 299));
        assert_eq!(p.get(298, 10), r.get(298, 10));
    }

    #[test]
    fn crop_one_pixel_past_right_edge_fails() {
        let r = gradient(10, 10);
        match crop(&r, RegionRect::new(1, 0, 10, 10)) {
            Err(RasterError::OutOfBounds { x, w, width, .. }) => {
                assert_eq!((x, w, width), (1, 10, 10))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crop_never_reads_outside_region() {
        // Everything outside the region is poisoned; the crop must not see it.
        let region = RegionRect::new(5, 7, 11, 6);
        let r = RgbRaster::from_fn(30, 20, |x, y| {
            let inside = (5..16).contains(&x) && (7..13).contains(&y);
            if inside {
                [x as u8, y as u8, 1]
            } else {
                [255, 0, 255]
            }
        })
        .unwrap();
        let c = crop(&r, region).unwrap();
        assert!(c.pixels().iter().all(|p| p[2] == 1));
    }

    #[test]
    fn mask_gray_rendering() {
        let m = BlueMask::new(2, 1, vec![true, false]).unwrap();
        assert_eq!(m.to_gray_image().into_raw(), vec![255, 0]);
        let decoded = image::load_from_memory(&encode_mask_png(&m).unwrap()).unwrap();
        assert_eq!(decoded.to_luma8().into_raw(), vec![255, 0]);
    }

    fn arb_raster() -> impl Strategy<Value = RgbRaster> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<[u8; 3]>(), (w * h) as usize)
                .prop_map(move |px| RgbRaster::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn png_round_trip_is_exact(r in arb_raster()) {
            let back = decode_image(&encode_png(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn crop_composes(
            r in arb_raster(),
            a in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
            b in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        ) {
            let pick = |w: u32, h: u32, f: (f64, f64, f64, f64)| {
                let x = (f.0 * w as f64) as u32 % w;
                let y = (f.1 * h as f64) as u32 % h;
                let cw = 1 + ((f.2 * (w - x) as f64) as u32).min(w - x - 1);
                let ch = 1 + ((f.3 * (h - y) as f64) as u32).min(h - y - 1);
                RegionRect::new(x, y, cw, ch)
            };
            let outer = pick(r.width(), r.height(), a);
            let inner = pick(outer.w, outer.h, b);
            let twice = crop(&crop(&r, outer).unwrap(), inner).unwrap();
            let once = crop(&r, outer.compose(&inner)).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
