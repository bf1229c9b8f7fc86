//! Seeded synthetic H&E-like slides for demos and tests.
//!
//! A slide is pink stroma with a few clusters of dark blue-purple nuclei.
//! Nothing here is meant to resemble real tissue beyond giving the mask a
//! realistic spread of bluish densities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::RgbRaster;

const STROMA: [u8; 3] = [232, 170, 205];
const NUCLEUS: [u8; 3] = [60, 40, 170];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlideSpec {
    pub width: u32,
    pub height: u32,
    /// Number of nucleus clusters.
    pub clusters: u32,
    pub nuclei_per_cluster: u32,
    /// Spread of a cluster around its centre, in pixels.
    pub cluster_radius: f64,
    pub seed: u64,
}

impl SlideSpec {
    pub fn new(width: u32, height: u32, seed: u64) -> Self {
        Self {
            width,
            height,
            clusters: 3,
            nuclei_per_cluster: 40,
            cluster_radius: (width.min(height) as f64 / 8.0).max(4.0),
            seed,
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amount: i16) -> [u8; 3] {
    base.map(|c| (i16::from(c) + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Renders a slide from `spec`; identical specs give identical pixels.
pub fn synthetic_slide(spec: &SlideSpec) -> RgbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut px: Vec<[u8; 3]> = (0..w * h).map(|_| jitter(&mut rng, STROMA, 12)).collect();
    for _ in 0..spec.clusters {
        let cx = rng.random_range(0.0..spec.width as f64);
        let cy = rng.random_range(0.0..spec.height as f64);
        for _ in 0..spec.nuclei_per_cluster {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = spec.cluster_radius * rng.random::<f64>().sqrt();
            let nx = cx + dist * angle.cos();
            let ny = cy + dist * angle.sin();
            let r = rng.random_range(2.5..6.0f64);
            let colour = jitter(&mut rng, NUCLEUS, 15);
            let (x0, x1) = (
                (nx - r).floor().max(0.0) as usize,
                ((nx + r).ceil() as usize).min(w),
            );
            let (y0, y1) = (
                (ny - r).floor().max(0.0) as usize,
                ((ny + r).ceil() as usize).min(h),
            );
            for y in y0..y1 {
                for x in x0..x1 {
                    let (dx, dy) = (x as f64 - nx, y as f64 - ny);
                    if dx * dx + dy * dy <= r * r {
                        px[y * w + x] = colour;
                    }
                }
            }
        }
    }
    RgbRaster::new(spec.width, spec.height, px).expect("buffer sized from spec")
}
