//! Synthetic detection scenes: textured background plus a few bright,
//! non-overlapping rectangles or disks, with per-level center-cell masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::rng::SplitMix64;
use crate::tensor::{Dims, FeatureMap};

/// Axis-aligned object, center and extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl ObjectBox {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cx + self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Intersection-over-union of the axis-aligned boxes.
    pub fn iou(&self, other: &ObjectBox) -> f64 {
        let (ax0, ax1, ay0, ay1) = self.bounds();
        let (bx0, bx1, by0, by1) = other.bounds();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.w * self.h + other.w * other.h - inter;
        inter / union
    }
}

/// One training example: the clean image, its objects, and per-level binary
/// masks (as `(1, 1, s, s)` maps, 1.0 at each object's center cell).
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageRGB,
    pub boxes: Vec<ObjectBox>,
    pub masks: Vec<FeatureMap>,
}

/// Number of pyramid levels a scene carries masks for.
pub const LEVELS: usize = 3;

/// Minimum Chebyshev distance between object centers. Keeps center cells
/// distinct down to the stride-4 level.
const MIN_CENTER_SEP: f64 = 8.0;

/// Deterministic scene of the given square size (64 or 128).
pub fn synthesize_scene(seed: u64, size: usize) -> Result<Scene> {
    if size != 64 && size != 128 {
        return Err(Error::Domain(format!("unsupported scene size {size}, expected 64 or 128")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut image = value_noise_background(&mut rng, size);

    let target = 4usize;
    let mut boxes: Vec<ObjectBox> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < target && attempts < 200 {
        attempts += 1;
        let w = rng.uniform(5.0, 9.0);
        let h = rng.uniform(5.0, 9.0);
        let cx = rng.uniform(w / 2.0 + 1.0, size as f64 - w / 2.0 - 1.0);
        let cy = rng.uniform(h / 2.0 + 1.0, size as f64 - h / 2.0 - 1.0);
        let candidate = ObjectBox { cx, cy, w, h };
        let ok = boxes.iter().all(|b| {
            b.iou(&candidate) == 0.0
                && ((b.cx - cx).abs().max((b.cy - cy).abs()) >= MIN_CENTER_SEP)
        });
        if !ok {
            continue;
        }
        let disk = rng.next_u64() % 2 == 0;
        let color = [rng.uniform(0.95, 1.0), rng.uniform(0.95, 1.0), rng.uniform(0.95, 1.0)];
        draw_object(&mut image, &candidate, disk, color);
        boxes.push(candidate);
    }

    let mut masks = Vec::with_capacity(LEVELS);
    for level in 0..LEVELS {
        let s = size >> level;
        let mut data = vec![0.0; s * s];
        for b in &boxes {
            let cell_x = (b.cx as usize) >> level;
            let cell_y = (b.cy as usize) >> level;
            data[cell_x * s + cell_y] = 1.0;
        }
        masks.push(FeatureMap::from_vec(Dims::new(1, 1, s, s), data)?);
    }
    Ok(Scene { image, boxes, masks })
}

/// Bilinear value noise on an 8-pixel lattice, one lattice per channel,
/// levels kept in the dark-to-mid range so objects stand out.
fn value_noise_background(rng: &mut SplitMix64, size: usize) -> ImageRGB {
    const STEP: usize = 8;
    let cells = size / STEP + 1;
    let mut lattices = Vec::with_capacity(3);
    for _ in 0..3 {
        let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.uniform(0.15, 0.28)).collect();
        lattices.push(lattice);
    }
    let mut data = Vec::with_capacity(3 * size * size);
    for lattice in &lattices {
        for y in 0..size {
            for x in 0..size {
                let gx = x / STEP;
                let gy = y / STEP;
                let fx = (x % STEP) as f64 / STEP as f64;
                let fy = (y % STEP) as f64 / STEP as f64;
                let v00 = lattice[gy * cells + gx];
                let v10 = lattice[gy * cells + gx + 1];
                let v01 = lattice[(gy + 1) * cells + gx];
                let v11 = lattice[(gy + 1) * cells + gx + 1];
                let v = v00 * (1.0 - fx) * (1.0 - fy)
                    + v10 * fx * (1.0 - fy)
                    + v01 * (1.0 - fx) * fy
                    + v11 * fx * fy;
                data.push(v);
            }
        }
    }
    ImageRGB::from_vec(size, size, data).expect("noise values stay in [0,1]")
}

fn draw_object(image: &mut ImageRGB, b: &ObjectBox, disk: bool, color: [f64; 3]) {
    let (x0, x1, y0, y1) = b.bounds();
    let (w, h) = (image.width(), image.height());
    let xs = libm::floor(x0).max(0.0) as usize;
    let xe = (libm::ceil(x1) as usize).min(w);
    let ys = libm::floor(y0).max(0.0) as usize;
    let ye = (libm::ceil(y1) as usize).min(h);
    let rx = b.w / 2.0;
    let ry = b.h / 2.0;
    for y in ys..ye {
        for x in xs..xe {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let inside = if disk {
                let nx = (px - b.cx) / rx;
                let ny = (py - b.cy) / ry;
                nx * nx + ny * ny <= 1.0
            } else {
                px >= x0 && px < x1 && py >= y0 && py < y1
            };
            if inside {
                for (c, &col) in color.iter().enumerate() {
                    let idx = image.idx(c, x, y);
                    image.data_mut()[idx] = col;
                }
            }
        }
    }
}
